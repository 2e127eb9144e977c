#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
异常定义模块
所有业务异常都继承自 CanAdvError，并携带命令行退出码
"""

from typing import Optional, Sequence


class CanAdvError(Exception):
    """工作台异常基类"""

    exit_code: int = 3


# ============ 用法错误（退出码 1） ============

class UsageError(CanAdvError):
    """命令行用法错误"""

    exit_code = 1


class ConfigError(UsageError):
    """配置文件或覆盖项不合法"""


# ============ 数据错误（退出码 2） ============

class DataError(CanAdvError):
    """输入数据错误"""

    exit_code = 2


class CanLogParseError(DataError):
    """
    CAN日志解析错误

    Args:
        message: 错误描述
        line_number: 出错行号（从1开始），未知时为None
        field: 出错字段名
    """

    def __init__(self, message: str, line_number: Optional[int] = None, field: str = ""):
        self.line_number = line_number
        self.field = field
        self.detail = message
        location = f"line {line_number}" if line_number is not None else "line ?"
        super().__init__(f"{location}, field '{field}': {message}")

    def at_line(self, line_number: int) -> "CanLogParseError":
        """返回带行号的同类异常"""
        return type(self)(self.detail, line_number, self.field)


class FieldCountError(CanLogParseError):
    """字段数量不足"""


class HexFieldError(CanLogParseError):
    """十六进制字段含非法字符"""


class TimestampError(CanLogParseError):
    """时间戳不合法"""


class DlcRangeError(CanLogParseError):
    """DLC超出 [0, 8]"""


class DlcDataMismatchError(CanLogParseError):
    """DLC与数据字节数不一致"""


class IdRangeError(CanLogParseError):
    """仲裁ID超出11位范围"""


class LabelError(CanLogParseError):
    """标签既不是R也不是T"""


class TrafficSpecError(DataError):
    """流量合成规格不合法"""


class DatasetError(DataError):
    """数据集为空、单一类别或规模不足"""


class GeometryError(DataError):
    """输入几何形状与模型族不匹配"""


class MissingArtifactError(DataError):
    """
    缺少上游产物

    Args:
        artifact: 缺失的产物路径或名称
        producer: 生成该产物的命令
    """

    def __init__(self, artifact: str, producer: str):
        self.artifact = artifact
        self.producer = producer
        super().__init__(f"missing artifact {artifact}; run `{producer}` first")


# ============ 内部错误（退出码 3） ============

class InternalError(CanAdvError):
    """内部错误"""

    exit_code = 3


class ShapeMismatchError(InternalError):
    """
    张量形状不匹配

    Args:
        operation: 原语名称
        shapes: 参与运算的各输入形状
    """

    def __init__(self, operation: str, shapes: Sequence, reason: str = ""):
        self.operation = operation
        self.shapes = [tuple(s) for s in shapes]
        suffix = f" ({reason})" if reason else ""
        super().__init__(f"{operation}: incompatible shapes {self.shapes}{suffix}")


class GradientError(InternalError):
    """反向传播前置条件不满足"""


class CapabilityError(InternalError):
    """模型族不提供所请求的能力（梯度、再训练）"""


class WorkdirLockedError(InternalError):
    """工作目录被其他命令占用"""
