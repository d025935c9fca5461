"""
avseg - 实例感知的音视频分割算法核心
"""

__version__ = "0.1.0"
