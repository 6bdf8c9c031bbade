"""
配置管理模块
负责运行配置的加载、合并和保存；优先级为 命令行参数 > 配置文件 > 内置默认值
"""

import copy
import json
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

from dotenv import find_dotenv, load_dotenv

from ..utils.errors import FormatError
from ..utils.logger import get_logger

HOME_ENV = 'LEECH_EXPLORER_HOME'
DEFAULT_HOME = Path.home() / '.leech_explorer'


class ConfigManager:
    """配置管理器"""

    def __init__(self, config_file: Optional[Union[str, Path]] = None):
        """初始化配置管理器

        显式给出的 config_file 必须存在且为合法 JSON；默认位置的配置文件可以不存在。
        """
        self.logger = get_logger('Config')
        # .env 中的 LEECH_EXPLORER_HOME 等变量
        load_dotenv(find_dotenv(usecwd=True))

        self.config_dir = Path(os.getenv(HOME_ENV) or DEFAULT_HOME)
        self.explicit = config_file is not None
        self.config_file = Path(config_file) if config_file is not None else self.config_dir / 'config.json'

        # 默认配置
        self.default_config = {
            'version': '0.1.0',
            'general': {
                'log_level': 'INFO',
                'log_dir': None,  # None 表示只输出到控制台
                'workers': 0  # 0 表示使用全部可用核心
            },
            'simulation': {
                'plan': None,  # None 使用内置 ECE 平面图
                'params': None,  # None 使用内置参数文件
                'start': None,  # None 使用内置平面图的起点
                'trials': 20,
                'max_steps': 1800,
                'seed': 0
            },
            'thermal': {
                'source_temp': 70.0,
                'ambient': 20.0,
                'tolerance': 1e-6,
                'max_iterations': 1000000
            },
            'metrics': {
                'tie_epsilon': 0.005,
                'thresholds': [0.0, 0.05, 0.10, 0.15],
                'frequency_cuts': [0.12, 0.20],
                'complexity_cuts': [0.12, 0.20],
                'occupancy': False
            },
            'imaging': {
                'zoom': 4,
                'wall_color': [128, 128, 128],
                'darkness_threshold': 40,
                'sample_rate': 1.0,
                'fps': 25.0,
                'luminance': False
            },
            'calibration': {
                'budget': 200,
                'trials_per_eval': 100,
                'bounds': {}  # 为空时使用引擎内置范围
            }
        }

        # 加载配置
        self.config = self.load_config()

    def load_config(self) -> Dict[str, Any]:
        """加载配置文件"""
        if not self.config_file.exists():
            if self.explicit:
                raise FormatError(f"配置文件不存在: {self.config_file}")
            return copy.deepcopy(self.default_config)
        try:
            with open(self.config_file, 'r', encoding='utf-8') as f:
                config = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            if self.explicit:
                raise FormatError(f"无法读取配置文件 {self.config_file}: {e}") from e
            self.logger.warning(f"加载配置失败: {e}，使用默认配置")
            return copy.deepcopy(self.default_config)
        if not isinstance(config, dict):
            raise FormatError(f"配置文件顶层必须是 JSON 对象: {self.config_file}")
        # 合并默认配置（处理新增配置项）
        return self._merge_config(self.default_config, config)

    def save_config(self) -> bool:
        """保存配置文件"""
        try:
            self.config_file.parent.mkdir(parents=True, exist_ok=True)
            with open(self.config_file, 'w', encoding='utf-8') as f:
                json.dump(self.config, f, indent=4, ensure_ascii=False)
            return True
        except OSError as e:
            self.logger.error(f"保存配置失败: {e}")
            return False

    def _merge_config(self, default: Dict, user: Dict) -> Dict:
        """合并默认配置和用户配置"""
        result = copy.deepcopy(default)
        for key, value in user.items():
            if key in result and isinstance(result[key], dict) and isinstance(value, dict):
                result[key] = self._merge_config(result[key], value)
            else:
                result[key] = value
        return result

    def get(self, key: str, default: Any = None) -> Any:
        """获取配置项（支持点号分隔的路径）"""
        keys = key.split('.')
        value = self.config
        for k in keys:
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default
        return value

    def set(self, key: str, value: Any, save: bool = True) -> bool:
        """设置配置项（支持点号分隔的路径）"""
        keys = key.split('.')
        config = self.config
        for k in keys[:-1]:
            if k not in config or not isinstance(config[k], dict):
                config[k] = {}
            config = config[k]
        config[keys[-1]] = value

        if save:
            return self.save_config()
        return True

    def resolve(self, key: str, override: Any = None) -> Any:
        """命令行给出的值优先，否则取配置值"""
        return override if override is not None else self.get(key)
