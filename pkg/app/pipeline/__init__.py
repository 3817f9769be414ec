"""
流水线：配置、交叉验证运行、超参数扫描与报告
"""
