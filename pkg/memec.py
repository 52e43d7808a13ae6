#!/usr/bin/env python3
"""
memec - 情景控制实验命令行工具
"""

import sys
from pathlib import Path

# 添加项目根目录到 Python 路径
sys.path.insert(0, str(Path(__file__).parent))

from memec.cli.commands import cli


if __name__ == "__main__":
    cli()
