"""nar-mtl - 非自回归翻译 + 弱自回归解码头多任务训练"""

__version__ = "0.1.0"
