"""
Utility functions for logging, configuration, errors and common array checks.
"""

import logging
import os
from pathlib import Path
from typing import Optional
import sys

import numpy as np

LOG_LEVEL_ENV = "VOLTVAR_LOG_LEVEL"


def setup_logger(name: str, level: Optional[int] = None) -> logging.Logger:
    """
    設置 logger 用於追蹤求解與模擬進度

    Args:
        name: Logger 名稱
        level: Logging 層級（None 時讀取環境變數 VOLTVAR_LOG_LEVEL，預設 INFO）

    Returns:
        Configured logger instance
    """
    if level is None:
        level_name = os.environ.get(LOG_LEVEL_ENV, "INFO").upper()
        level = getattr(logging, level_name, logging.INFO)
        if not isinstance(level, int):
            level = logging.INFO

    logger = logging.getLogger(name)
    logger.setLevel(level)

    # 如果已有 handler，不重複添加
    if logger.handlers:
        return logger

    # Console handler
    handler = logging.StreamHandler(sys.stdout)
    handler.setLevel(level)

    # Formatter
    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    handler.setFormatter(formatter)

    logger.addHandler(handler)
    return logger


class Config:
    """
    專案設定管理
    """
    # 專案根目錄
    PROJECT_ROOT = Path(__file__).parent.parent

    # 輸出目錄（每個子命令在此建立子目錄）
    OUTPUT_DIR = PROJECT_ROOT / "outputs"


# --------------------------------
# 錯誤類別
# --------------------------------
class VoltVarError(Exception):
    """所有可預期錯誤的基底類別；category 決定 CLI 結束碼"""
    category = "internal"


class ConfigError(VoltVarError):
    """設定錯誤（參數範圍、檔案不存在、問題規模超出限制）"""
    category = "config"


class DataError(VoltVarError):
    """輸入資料錯誤（網路文件、情境資料、維度不符）"""
    category = "data"


class ConvergenceError(VoltVarError):
    """數值求解未收斂"""
    category = "convergence"


class DimensionError(DataError, ValueError):
    """向量或矩陣維度不符"""
    pass


EXIT_CODES = {
    "config": 2,
    "data": 3,
    "convergence": 4,
    "internal": 1,
}


def exit_code_for(error: BaseException) -> int:
    """依錯誤類別取得 CLI 結束碼"""
    if isinstance(error, VoltVarError):
        return EXIT_CODES.get(error.category, 1)
    return 1


# --------------------------------
# 陣列檢查
# --------------------------------
def as_vector(values, size: int, name: str, dtype=float, broadcast: bool = False) -> np.ndarray:
    """
    轉為一維 ndarray 並檢查長度

    Args:
        values: 任意可轉為陣列的輸入
        size: 預期長度
        name: 變數名稱（用於錯誤訊息）
        broadcast: 是否允許純量廣播（size == 1 時一律允許）

    Returns:
        shape == (size,) 的陣列
    """
    arr = np.asarray(values, dtype=dtype)
    if arr.ndim == 0:
        if broadcast or size == 1:
            return np.full(size, arr.item(), dtype=dtype)
        raise DimensionError(f"{name} 維度錯誤: 預期 ({size},)，實際為純量")
    arr = arr.reshape(-1) if arr.ndim == 2 and 1 in arr.shape else arr
    if arr.shape != (size,):
        raise DimensionError(f"{name} 維度錯誤: 預期 ({size},)，實際 {arr.shape}")
    return arr


def format_duration(seconds: float) -> str:
    """
    格式化耗時

    Args:
        seconds: 秒數

    Returns:
        Formatted string (e.g., "1.5 s", "2 min 3.0 s")
    """
    if seconds < 60:
        return f"{seconds:.2f} s"
    minutes, rest = divmod(seconds, 60)
    return f"{int(minutes)} min {rest:.1f} s"
