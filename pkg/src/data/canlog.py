#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
CAN日志模块
解析、校验、写出和合成Survival数据集格式的CAN流量日志

记录格式（每行一条）:
    <时间戳, 6位小数> <4位十六进制ID> <DLC> <DLC个2位十六进制字节> <R|T>
"""

import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from loguru import logger

from src.core.exceptions import (
    CanLogParseError,
    DlcDataMismatchError,
    DlcRangeError,
    FieldCountError,
    HexFieldError,
    IdRangeError,
    LabelError,
    TimestampError,
    TrafficSpecError,
)

ID_BITS = 11
MAX_CAN_ID = (1 << ID_BITS) - 1
MAX_DLC = 8
MAX_DOS_ID = 7

_SEPARATORS = re.compile(r"[,\s]+")
_HEX = re.compile(r"[0-9a-fA-F]+")
_DECIMAL = re.compile(r"[0-9]+")
_US = 1_000_000


class Label(str, Enum):
    """消息标签"""
    NORMAL = "R"
    ATTACK = "T"


class AttackKind(str, Enum):
    """合成流量中的攻击类型"""
    NONE = "none"
    DOS = "dos"
    FUZZY = "fuzzy"
    MALFUNCTION = "malfunction"


@dataclass(frozen=True)
class CanRecord:
    """单条CAN日志记录"""
    timestamp: float
    can_id: int
    dlc: int
    data: Tuple[int, ...]
    label: Label

    def __post_init__(self):
        if not 0 <= self.can_id <= MAX_CAN_ID:
            raise IdRangeError(f"id {self.can_id} does not fit in {ID_BITS} bits", field="can_id")
        if not 0 <= self.dlc <= MAX_DLC:
            raise DlcRangeError(f"dlc {self.dlc} outside [0, {MAX_DLC}]", field="dlc")
        if len(self.data) != self.dlc:
            raise DlcDataMismatchError(
                f"{self.dlc} declared, {len(self.data)} present", field="data"
            )
        if any(not 0 <= b <= 0xFF for b in self.data):
            raise HexFieldError("data byte outside [0, 255]", field="data")
        if self.timestamp < 0:
            raise TimestampError("negative timestamp", field="timestamp")

    @property
    def is_attack(self) -> bool:
        return self.label is Label.ATTACK


# ============ 解析 ============

def _parse_hex(token: str, field_name: str) -> int:
    if not _HEX.fullmatch(token):
        raise HexFieldError(f"'{token}' is not hexadecimal", field=field_name)
    return int(token, 16)


def parse_line(line: str, line_number: Optional[int] = None) -> CanRecord:
    """
    解析一行日志

    Args:
        line: 日志行（空白或逗号分隔）
        line_number: 行号，用于诊断信息

    Returns:
        CanRecord: 解析后的记录
    """
    try:
        return _parse_fields(_SEPARATORS.split(line.strip()))
    except CanLogParseError as e:
        raise e.at_line(line_number) if line_number is not None else e


def _parse_fields(tokens: List[str]) -> CanRecord:
    tokens = [t for t in tokens if t]
    if len(tokens) < 4:
        raise FieldCountError(f"expected at least 4 fields, got {len(tokens)}", field="record")

    try:
        timestamp = float(tokens[0])
    except ValueError:
        raise TimestampError(f"'{tokens[0]}' is not a decimal timestamp", field="timestamp")
    if not np.isfinite(timestamp) or timestamp < 0:
        raise TimestampError(f"'{tokens[0]}' is not a non-negative timestamp", field="timestamp")

    can_id = _parse_hex(tokens[1], "can_id")
    if can_id > MAX_CAN_ID:
        raise IdRangeError(f"id 0x{can_id:X} >= 2^{ID_BITS}", field="can_id")

    if not _DECIMAL.fullmatch(tokens[2]):
        raise FieldCountError(f"dlc '{tokens[2]}' is not a decimal count", field="dlc")
    dlc = int(tokens[2])
    if dlc > MAX_DLC:
        raise DlcRangeError(f"dlc {dlc} > {MAX_DLC}", field="dlc")

    data_tokens = tokens[3:-1]
    if len(data_tokens) != dlc:
        raise DlcDataMismatchError(f"{dlc} declared, {len(data_tokens)} present", field="data")
    data = []
    for i, token in enumerate(data_tokens):
        value = _parse_hex(token, f"data[{i}]")
        if value > 0xFF:
            raise HexFieldError(f"byte '{token}' exceeds 0xFF", field=f"data[{i}]")
        data.append(value)

    try:
        label = Label(tokens[-1].upper())
    except ValueError:
        raise LabelError(f"label '{tokens[-1]}' is neither R nor T", field="label")

    return CanRecord(timestamp=timestamp, can_id=can_id, dlc=dlc, data=tuple(data), label=label)


def parse_file(path: Union[str, Path]) -> List[CanRecord]:
    """
    解析日志文件，保持文件顺序，不对时间戳重排

    Args:
        path: 日志文件路径

    Returns:
        List[CanRecord]: 记录列表（空文件返回空列表）
    """
    path = Path(path)
    records: List[CanRecord] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, 1):
            if not line.strip():
                continue
            records.append(parse_line(line, line_number))
    logger.debug(f"解析 {path.name}: {len(records)} 条记录")
    return records


# ============ 写出 ============

def format_record(record: CanRecord) -> str:
    """按日志格式输出单条记录"""
    fields = [f"{record.timestamp:.6f}", f"{record.can_id:04x}", str(record.dlc)]
    fields.extend(f"{b:02x}" for b in record.data)
    fields.append(record.label.value)
    return " ".join(fields)


def write_file(records: Sequence[CanRecord], path: Union[str, Path]):
    """
    写出日志文件，parse_file(write_file(r)) == r

    Args:
        records: 记录序列
        path: 输出路径
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(format_record(record) + "\n")
    logger.debug(f"写出 {len(records)} 条记录到 {path}")


# ============ 合成 ============

@dataclass
class NormalIdSpec:
    """一个周期性正常ID；payload模板中 '??' 表示每条消息随机的字节"""
    can_id: int
    period: float
    payload: List[str] = field(default_factory=lambda: ["00"] * 8)


@dataclass
class TrafficSpec:
    """
    流量合成规格

    attack_params 按攻击类型取值:
        dos: flood_id (<= 7), gap, start, end
        fuzzy: rate (条/秒), start, end
        malfunction: target_id, interval, payload (8字节), start, end
    """
    duration: float
    normal_ids: List[NormalIdSpec]
    attack_kind: AttackKind = AttackKind.NONE
    attack_params: Dict = field(default_factory=dict)
    seed: int = 0

    def validate(self):
        """校验规格，不合法时抛出 TrafficSpecError"""
        if self.duration <= 0:
            raise TrafficSpecError(f"duration must be positive, got {self.duration}")
        if not self.normal_ids:
            raise TrafficSpecError("normal_ids must not be empty")
        for spec in self.normal_ids:
            if spec.period <= 0:
                raise TrafficSpecError(f"period of id 0x{spec.can_id:x} must be positive")
            if not 0 <= spec.can_id <= MAX_CAN_ID:
                raise TrafficSpecError(f"id {spec.can_id} does not fit in {ID_BITS} bits")
            if len(spec.payload) > MAX_DLC:
                raise TrafficSpecError(f"payload of id 0x{spec.can_id:x} exceeds {MAX_DLC} bytes")

        p = self.attack_params
        if self.attack_kind is AttackKind.DOS:
            if int(p.get("flood_id", 0)) > MAX_DOS_ID:
                raise TrafficSpecError(f"DoS flood_id must be <= {MAX_DOS_ID}")
            if float(p.get("gap", 0)) <= 0:
                raise TrafficSpecError("DoS gap must be positive")
        elif self.attack_kind is AttackKind.FUZZY:
            if float(p.get("rate", 0)) <= 0:
                raise TrafficSpecError("Fuzzy rate must be positive")
        elif self.attack_kind is AttackKind.MALFUNCTION:
            if float(p.get("interval", 0)) <= 0:
                raise TrafficSpecError("Malfunction interval must be positive")
            if len(p.get("payload", [])) != MAX_DLC:
                raise TrafficSpecError("Malfunction payload must have exactly 8 bytes")
            if int(p.get("target_id", -1)) not in {s.can_id for s in self.normal_ids}:
                raise TrafficSpecError("Malfunction target_id must be one of the normal ids")


def _to_int(value) -> int:
    if isinstance(value, str):
        return int(value, 16) if value.lower().startswith("0x") else int(value)
    return int(value)


def load_traffic_spec(path: Union[str, Path]) -> TrafficSpec:
    """
    从YAML文件加载流量规格

    Args:
        path: 规格文件路径

    Returns:
        TrafficSpec: 流量规格
    """
    path = Path(path)
    if not path.exists():
        raise TrafficSpecError(f"traffic spec not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise TrafficSpecError(f"cannot parse {path}: {e}") from e
    try:
        normal_ids = [
            NormalIdSpec(
                can_id=_to_int(item["can_id"]),
                period=float(item["period"]),
                payload=[str(b) for b in item.get("payload", ["00"] * 8)],
            )
            for item in raw.get("normal_ids", [])
        ]
        params = dict(raw.get("attack_params", {}) or {})
        for key in ("flood_id", "target_id"):
            if key in params:
                params[key] = _to_int(params[key])
        spec = TrafficSpec(
            duration=float(raw["duration"]),
            normal_ids=normal_ids,
            attack_kind=AttackKind(str(raw.get("attack_kind", "none")).lower()),
            attack_params=params,
            seed=int(raw.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise TrafficSpecError(f"invalid traffic spec {path}: {e}") from e
    spec.validate()
    return spec


def _payload_bytes(template: Sequence[str], rng: np.random.Generator) -> Tuple[int, ...]:
    out = []
    for token in template:
        token = str(token)
        out.append(int(rng.integers(0, 256)) if token == "??" else int(token, 16))
    return tuple(out)


def _attack_window(params: Dict, duration_us: int) -> Tuple[int, int]:
    start = int(round(float(params.get("start", 0.0)) * _US))
    end = int(round(float(params.get("end", duration_us / _US)) * _US))
    return max(0, start), min(duration_us, end)


def synthesize(spec: TrafficSpec) -> List[CanRecord]:
    """
    按规格确定性地合成CAN流量

    Args:
        spec: 流量规格

    Returns:
        List[CanRecord]: 按时间戳排序的记录（攻击消息标记为T）
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    duration_us = int(round(spec.duration * _US))

    # (时间us, 生成顺序, 记录)；整数微秒保证计数精确
    events: List[Tuple[int, int, CanRecord]] = []

    for id_spec in spec.normal_ids:
        period_us = max(1, int(round(id_spec.period * _US)))
        offset = int(rng.integers(0, period_us))
        for t in range(offset, duration_us, period_us):
            data = _payload_bytes(id_spec.payload, rng)
            events.append((t, len(events), CanRecord(
                t / _US, id_spec.can_id, len(data), data, Label.NORMAL)))

    p = spec.attack_params
    start, end = _attack_window(p, duration_us)
    if spec.attack_kind is AttackKind.DOS:
        gap_us = max(1, int(round(float(p["gap"]) * _US)))
        flood_id = int(p.get("flood_id", 0))
        for t in range(start, end, gap_us):
            events.append((t, len(events), CanRecord(
                t / _US, flood_id, MAX_DLC, (0,) * MAX_DLC, Label.ATTACK)))
    elif spec.attack_kind is AttackKind.FUZZY:
        step_us = max(1, int(round(_US / float(p["rate"]))))
        for t in range(start, end, step_us):
            data = tuple(int(b) for b in rng.integers(0, 256, size=MAX_DLC))
            can_id = int(rng.integers(0, MAX_CAN_ID + 1))
            events.append((t, len(events), CanRecord(t / _US, can_id, MAX_DLC, data, Label.ATTACK)))
    elif spec.attack_kind is AttackKind.MALFUNCTION:
        interval_us = max(1, int(round(float(p["interval"]) * _US)))
        payload = tuple(int(str(b), 16) for b in p["payload"])
        target = int(p["target_id"])
        for t in range(start, end, interval_us):
            events.append((t, len(events), CanRecord(t / _US, target, MAX_DLC, payload, Label.ATTACK)))

    events.sort(key=lambda e: (e[0], e[1]))
    records = [e[2] for e in events]
    n_attack = sum(r.is_attack for r in records)
    logger.info(
        f"合成流量: kind={spec.attack_kind.value}, seed={spec.seed}, "
        f"{len(records)} 条记录 ({n_attack} 条攻击)"
    )
    return records
