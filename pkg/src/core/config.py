"""
配置管理模块
1. 运行时配置：从环境变量 / .env 读取（日志级别、解码并发），不影响数值结果
2. 实验配置：flat `section.key = value` 文本文件 <-> ExperimentConfig
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.core.models import ExperimentConfig
from src.utils.error_handler import ConfigError, CorpusError

logger = logging.getLogger(__name__)


class RuntimeSettings(BaseSettings):
    """运行时相关配置"""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",  # 忽略额外的环境变量
    )

    # 日志配置
    log_level: str = "INFO"
    log_json_path: Optional[str] = None

    # 解码并发配置
    decode_max_concurrency: int = 8
    decode_chunk_size: int = 64


# 全局配置实例
runtime_settings = RuntimeSettings()


def _section_keys() -> Dict[str, List[str]]:
    """每个 section 可用的键（使用别名，例如 mtl.lambda）"""
    keys: Dict[str, List[str]] = {}
    for section, field in ExperimentConfig.model_fields.items():
        model_cls = field.annotation
        keys[section] = [f.alias or name for name, f in model_cls.model_fields.items()]
    return keys


def valid_keys() -> List[str]:
    """全部合法的 `section.key`"""
    return [f"{s}.{k}" for s, ks in _section_keys().items() for k in ks]


def _parse_value(raw: str) -> Any:
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_flat(text: str) -> Dict[str, Any]:
    """
    解析 flat 配置文本

    Args:
        text: 配置文本，每行 `section.key = value`，`#` 开头为注释

    Returns:
        {"section.key": value}

    Raises:
        ConfigError: 行格式错误或包含未知键
    """
    allowed = set(valid_keys())
    flat: Dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"第 {lineno} 行缺少 '=': {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in allowed:
            raise ConfigError(f"未知配置键 {key!r}; 合法的键: {', '.join(sorted(allowed))}")
        flat[key] = _parse_value(raw)
    return flat


def build_config(flat: Dict[str, Any]) -> ExperimentConfig:
    """把 {"section.key": value} 组装成 ExperimentConfig"""
    allowed = set(valid_keys())
    nested: Dict[str, Dict[str, Any]] = {}
    for key, value in flat.items():
        if key not in allowed:
            raise ConfigError(f"未知配置键 {key!r}; 合法的键: {', '.join(sorted(allowed))}")
        section, name = key.split(".", 1)
        nested.setdefault(section, {})[name] = value
    try:
        return ExperimentConfig.model_validate(nested)
    except ValidationError as e:
        raise ConfigError(f"配置校验失败: {e}") from e


def load_config(path: Optional[Union[str, Path]]) -> ExperimentConfig:
    """
    读取实验配置文件；path 为 None 时返回默认配置

    Raises:
        CorpusError: 文件不存在
        ConfigError: 内容非法
    """
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"配置文件不存在: {path}")
    config = build_config(parse_flat(path.read_text(encoding="utf-8")))
    logger.info(f"✅ 已加载配置: {path}")
    return config


def config_to_flat(config: ExperimentConfig) -> Dict[str, Any]:
    data = config.model_dump(mode="json", by_alias=True)
    return {f"{section}.{key}": value for section, values in data.items() for key, value in values.items()}


def dump_config(config: ExperimentConfig) -> str:
    """序列化为 flat 文本（show-config 的输出，可被 parse_flat 读回）"""
    lines = [f"{key} = {json.dumps(value)}" for key, value in config_to_flat(config).items()]
    return "\n".join(lines) + "\n"


def with_overrides(config: ExperimentConfig, overrides: Dict[str, Any]) -> ExperimentConfig:
    """在现有配置上覆盖若干 `section.key`"""
    flat = config_to_flat(config)
    flat.update(overrides)
    return build_config(flat)


def config_snapshot(config: ExperimentConfig) -> Dict[str, Any]:
    return config.model_dump(mode="json", by_alias=True)


def config_from_snapshot(snapshot: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(snapshot)
    except ValidationError as e:
        raise ConfigError(f"检查点中的配置快照非法: {e}") from e
