"""
数据存储模块：时间序列文件与模型检查点的读写
"""
