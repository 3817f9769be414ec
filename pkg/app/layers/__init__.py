"""
分析层：线性/深度 CCA、多路 CCA 与评价指标
"""
