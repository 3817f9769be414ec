"""
核心组件模块
"""

