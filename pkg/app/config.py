"""
配置管理模块
从环境变量（或 .env 文件）加载，未设置时使用默认值
"""
from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Any, Optional


class EnvSettings(BaseSettings):
    """环境变量配置 - 变量名统一带 CORRDECODE_ 前缀"""

    model_config = SettingsConfigDict(
        env_prefix="CORRDECODE_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    APP_NAME: Optional[str] = None
    LOG_LEVEL: Optional[str] = None
    LOG_FILE: Optional[str] = None
    LOG_MAX_BYTES: Optional[int] = None
    LOG_BACKUP_COUNT: Optional[int] = None
    DEFAULT_THREADS: Optional[int] = None
    WHITEN_RIDGE_SCALE: Optional[float] = None
    EIG_FLOOR: Optional[float] = None
    CORR_RIDGE_SCALE: Optional[float] = None
    EARLY_STOP_PATIENCE: Optional[int] = None
    N_SEGMENTS: Optional[int] = None
    LEAKY_SLOPE: Optional[float] = None


class Settings:
    """应用配置类 - 所有配置项优先取环境变量，否则使用默认值"""

    def __init__(self):
        self._env = EnvSettings()

    def _get(self, key: str, default: Any) -> Any:
        """读取环境配置，未设置则返回默认值"""
        value = getattr(self._env, key, None)
        return default if value is None else value

    # ============================================
    # 应用基础配置
    # ============================================
    @property
    def APP_NAME(self) -> str:
        """应用名称，用于日志和报告"""
        return self._get('APP_NAME', 'CorrDecode')

    @property
    def APP_VERSION(self) -> str:
        """应用版本号（写入报告的 library_version 字段）"""
        from app import __version__
        return __version__

    @property
    def DEFAULT_THREADS(self) -> int:
        """交叉验证折并行的默认线程数，CLI 的 --threads 可覆盖"""
        return self._get('DEFAULT_THREADS', 1)

    # ============================================
    # 数值配置
    # ============================================
    @property
    def WHITEN_RIDGE_SCALE(self) -> float:
        """白化岭系数的相对尺度：ridge = 尺度 × trace(A)/p"""
        return self._get('WHITEN_RIDGE_SCALE', 1e-6)

    @property
    def EIG_FLOOR(self) -> float:
        """逆平方根的特征值下限（相对最大特征值），低于该值的特征值被截断"""
        return self._get('EIG_FLOOR', 1e-10)

    @property
    def CORR_RIDGE_SCALE(self) -> float:
        """深度CCA相关目标中自协方差的岭系数相对尺度：1e-4 × trace/d"""
        return self._get('CORR_RIDGE_SCALE', 1e-4)

    @property
    def EARLY_STOP_PATIENCE(self) -> int:
        """深度模型早停耐心（验证集相关连续多少个epoch不提升即停止）"""
        return self._get('EARLY_STOP_PATIENCE', 10)

    @property
    def N_SEGMENTS(self) -> int:
        """d′ 分段分类中对齐/错位片段的默认抽样数"""
        return self._get('N_SEGMENTS', 200)

    @property
    def LEAKY_SLOPE(self) -> float:
        """Leaky ReLU 负半轴斜率"""
        return self._get('LEAKY_SLOPE', 0.1)

    # ============================================
    # 日志配置
    # ============================================
    @property
    def LOG_LEVEL(self) -> str:
        """日志级别：DEBUG, INFO, WARNING, ERROR, CRITICAL"""
        return self._get('LOG_LEVEL', 'INFO')

    @property
    def LOG_FILE(self) -> str:
        """日志文件路径，设置为空字符串则只输出到控制台"""
        return self._get('LOG_FILE', 'logs/corrdecode.log')

    @property
    def LOG_MAX_BYTES(self) -> int:
        """单个日志文件最大大小（字节），默认10MB，超过此大小会轮转"""
        return self._get('LOG_MAX_BYTES', 10485760)

    @property
    def LOG_BACKUP_COUNT(self) -> int:
        """日志文件备份数量，保留多少个历史日志文件"""
        return self._get('LOG_BACKUP_COUNT', 5)


# 全局配置实例
settings = Settings()
