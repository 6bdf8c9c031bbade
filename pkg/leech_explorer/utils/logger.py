"""
日志管理模块
"""

import logging
from pathlib import Path
from logging.handlers import RotatingFileHandler
from datetime import datetime
from typing import Optional, Union


class Logger:
    """日志管理器"""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
            cls._instance._initialized = False
        return cls._instance

    def __init__(self):
        if self._initialized:
            return

        self._initialized = True
        self.log_dir: Optional[Path] = None
        self.log_file: Optional[Path] = None
        self._file_handler: Optional[RotatingFileHandler] = None

        # 配置根日志记录器
        self.logger = logging.getLogger('LeechExplorer')
        self.logger.setLevel(logging.DEBUG)

        # 避免重复添加处理器
        if not self.logger.handlers:
            # 控制台处理器（不带时间戳，保证输出可复现）
            console_handler = logging.StreamHandler()
            console_handler.setLevel(logging.INFO)
            console_handler.setFormatter(logging.Formatter('%(levelname)s: %(message)s'))
            self.logger.addHandler(console_handler)

    def configure(self, log_dir: Optional[Union[str, Path]] = None, level: str = 'INFO') -> Optional[Path]:
        """挂载文件日志并设置控制台级别，时间戳只写入日志文件"""
        self.set_level(level)
        if log_dir is None:
            return None

        log_dir = Path(log_dir)
        try:
            log_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            self.logger.warning(f"无法创建日志目录 {log_dir}: {e}")
            return None

        log_file = log_dir / f'leech_explorer_{datetime.now().strftime("%Y%m%d")}.log'
        if self._file_handler is not None:
            if self.log_file == log_file:
                return log_file
            self.logger.removeHandler(self._file_handler)
            self._file_handler.close()

        # 文件处理器（自动轮转）
        file_handler = RotatingFileHandler(
            log_file,
            maxBytes=10*1024*1024,  # 10MB
            backupCount=5,
            encoding='utf-8'
        )
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        ))
        self.logger.addHandler(file_handler)

        self._file_handler = file_handler
        self.log_dir = log_dir
        self.log_file = log_file
        return log_file

    def get_logger(self, name: str = None) -> logging.Logger:
        """获取日志记录器"""
        if name:
            return logging.getLogger(f'LeechExplorer.{name}')
        return self.logger

    def set_level(self, level: str):
        """设置控制台日志级别"""
        level_map = {
            'DEBUG': logging.DEBUG,
            'INFO': logging.INFO,
            'WARNING': logging.WARNING,
            'ERROR': logging.ERROR,
            'CRITICAL': logging.CRITICAL
        }
        for handler in self.logger.handlers:
            if handler is not self._file_handler:
                handler.setLevel(level_map.get(level.upper(), logging.INFO))


# 全局日志实例
_logger_instance = Logger()


def get_logger(name: str = None) -> logging.Logger:
    """获取日志记录器"""
    return _logger_instance.get_logger(name)


def configure_logging(log_dir: Optional[Union[str, Path]] = None, level: str = 'INFO') -> Optional[Path]:
    """配置全局日志"""
    return _logger_instance.configure(log_dir, level)
