import csv
import hashlib
import json
import logging
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence

from .config import config


def setup_logging(level: Optional[int | str] = None):
    """配置全局日志记录器；level 默认取 config.LOG_LEVEL"""
    level = config.LOG_LEVEL if level is None else level
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(levelname)s - %(message)s",
    )
    logging.info("日志系统已启动。")


def ensure_directory_exists(path: str):
    """确保指定路径的目录存在，如果不存在则创建它"""
    if not path:
        return
    if not os.path.exists(path):
        os.makedirs(path)
        logging.info(f"已创建目录: {path}")
    else:
        logging.debug(f"目录已存在: {path}")


def stable_digest(payload: Dict[str, Any]) -> str:
    """
    为一个可 JSON 序列化的字典生成确定性的 SHA256 摘要。
    键排序后再序列化，保证相同内容得到相同摘要。
    """
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def format_number(value: Any) -> str:
    """浮点数按配置的格式输出（至少 12 位有效数字），其余类型原样转字符串"""
    if isinstance(value, float):
        return config.CSV_FLOAT_FORMAT % value
    return str(value)


def write_csv(path: str, columns: Sequence[str], rows: Iterable[Dict[str, Any]]) -> int:
    """
    将行写入 UTF-8 CSV 文件（带表头）。

    Returns:
        int: 写入的数据行数
    """
    ensure_directory_exists(os.path.dirname(path))
    count = 0
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_number(row[c]) for c in columns])
            count += 1
    logging.info(f"已写入 CSV: {path}（{count} 行）")
    return count


def read_csv(path: str) -> List[Dict[str, str]]:
    """读取 CSV 文件为字典列表"""
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))
