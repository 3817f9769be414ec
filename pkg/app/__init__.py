"""
CorrDecode - 刺激-响应相关分析工具包（线性/深度 CCA 与多路 CCA）
"""

__version__ = "1.0.0"
