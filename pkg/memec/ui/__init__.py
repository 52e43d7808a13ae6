"""
终端显示模块
"""
