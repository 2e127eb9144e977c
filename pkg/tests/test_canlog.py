#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
CAN日志测试
解析、校验、写出与流量合成
"""

import pytest

from src.core.exceptions import (
    DlcDataMismatchError,
    DlcRangeError,
    FieldCountError,
    HexFieldError,
    IdRangeError,
    LabelError,
    TimestampError,
    TrafficSpecError,
)
from src.data.canlog import (
    MAX_DOS_ID,
    AttackKind,
    CanRecord,
    Label,
    format_record,
    load_traffic_spec,
    parse_file,
    parse_line,
    synthesize,
    write_file,
)
from tests.conftest import make_spec


class TestParse:
    """日志解析测试"""

    def test_parse_normal_line(self):
        """测试解析一条正常记录"""
        record = parse_line("1478198376.389427 0316 8 05 21 68 09 21 21 00 6f R")
        assert record.timestamp == pytest.approx(1478198376.389427)
        assert record.can_id == 0x316
        assert record.dlc == 8
        assert record.data == (0x05, 0x21, 0x68, 0x09, 0x21, 0x21, 0x00, 0x6F)
        assert record.label is Label.NORMAL
        assert not record.is_attack

    def test_parse_comma_separated(self):
        """测试逗号分隔的记录"""
        record = parse_line("0.5,0000,8,00,00,00,00,00,00,00,00,T")
        assert record.can_id == 0
        assert record.is_attack

    def test_zero_dlc(self):
        """测试DLC为0的记录"""
        record = parse_line("0.000100 0545 0 R")
        assert record.dlc == 0
        assert record.data == ()

    @pytest.mark.parametrize("line,error,field", [
        ("0.1 0316 8 05 R", DlcDataMismatchError, "data"),
        ("0.1 0316 9 05 21 68 09 21 21 00 6f 00 R", DlcRangeError, "dlc"),
        ("0.1 0g16 1 05 R", HexFieldError, "can_id"),
        ("0.1 0316 1 zz R", HexFieldError, "data[0]"),
        ("0.1 0800 1 05 R", IdRangeError, "can_id"),
        ("abc 0316 1 05 R", TimestampError, "timestamp"),
        ("0.1 0316 1 05 X", LabelError, "label"),
        ("0.1 0316", FieldCountError, "record"),
        ("0.1 0316 \u00b2 05 05 R", FieldCountError, "dlc"),
        ("0.1 0316 \u0661 05 R", FieldCountError, "dlc"),
        ("0.1 \uff10316 1 05 R", HexFieldError, "can_id"),
    ])
    def test_malformed_lines(self, line, error, field):
        """测试各类格式错误"""
        with pytest.raises(error) as info:
            parse_line(line, line_number=3)
        assert info.value.line_number == 3
        assert info.value.field == field

    def test_empty_file(self, tmp_path):
        """测试空文件得到空列表"""
        path = tmp_path / "empty.log"
        path.write_text("")
        assert parse_file(path) == []

    def test_error_reports_line_number(self, tmp_path):
        """测试文件中的错误行号"""
        path = tmp_path / "bad.log"
        path.write_text("0.1 0316 0 R\n\n0.2 0316 2 01 R\n")
        with pytest.raises(DlcDataMismatchError) as info:
            parse_file(path)
        assert info.value.line_number == 3

    def test_file_order_preserved(self, tmp_path):
        """测试保持文件顺序（不按时间戳重排）"""
        path = tmp_path / "order.log"
        path.write_text("0.3 0001 0 R\n0.1 0002 0 R\n")
        assert [r.can_id for r in parse_file(path)] == [1, 2]


class TestWrite:
    """日志写出测试"""

    def test_format_record(self):
        """测试记录格式"""
        record = CanRecord(1.5, 0x2A0, 2, (0x64, 0x00), Label.ATTACK)
        assert format_record(record) == "1.500000 02a0 2 64 00 T"

    def test_write_then_parse(self, tmp_path):
        """测试写出后解析得到相同记录"""
        records = synthesize(make_spec(AttackKind.MALFUNCTION, duration=0.5))
        path = tmp_path / "out.log"
        write_file(records, path)
        assert parse_file(path) == records


class TestSynthesis:
    """流量合成测试"""

    def test_deterministic(self):
        """测试同一种子得到相同流量"""
        assert synthesize(make_spec(AttackKind.FUZZY, seed=3)) == synthesize(make_spec(AttackKind.FUZZY, seed=3))

    def test_normal_only(self):
        """测试无攻击流量全部为正常记录"""
        records = synthesize(make_spec(AttackKind.NONE))
        assert records
        assert not any(r.is_attack for r in records)

    def test_sorted_by_timestamp(self):
        """测试记录按时间排序"""
        records = synthesize(make_spec(AttackKind.DOS))
        times = [r.timestamp for r in records]
        assert times == sorted(times)

    def test_dos_uses_high_priority_id(self):
        """测试DoS攻击消息使用最高优先级ID"""
        records = synthesize(make_spec(AttackKind.DOS))
        attack = [r for r in records if r.is_attack]
        assert attack
        assert all(r.can_id <= MAX_DOS_ID for r in attack)
        assert all(r.data == (0,) * 8 for r in attack)

    def test_malfunction_targets_normal_id(self):
        """测试Malfunction攻击使用合法ID与固定数据"""
        records = synthesize(make_spec(AttackKind.MALFUNCTION))
        attack = [r for r in records if r.is_attack]
        assert {r.can_id for r in attack} == {0x316}
        assert {r.data for r in attack} == {(0xFF,) * 8}

    def test_attack_window(self):
        """测试攻击只出现在攻击窗口内"""
        records = synthesize(make_spec(AttackKind.FUZZY))
        attack_times = [r.timestamp for r in records if r.is_attack]
        assert min(attack_times) >= 0.5
        assert max(attack_times) < 1.5

    def test_invalid_specs(self):
        """测试非法规格"""
        spec = make_spec(AttackKind.DOS)
        spec.attack_params["flood_id"] = MAX_DOS_ID + 1
        with pytest.raises(TrafficSpecError):
            spec.validate()

        spec = make_spec(AttackKind.MALFUNCTION)
        spec.attack_params["target_id"] = 0x7FF
        with pytest.raises(TrafficSpecError):
            spec.validate()

        spec = make_spec(AttackKind.NONE, duration=0)
        with pytest.raises(TrafficSpecError):
            spec.validate()

    def test_load_yaml_spec(self, tmp_path):
        """测试从YAML加载规格（十六进制ID）"""
        path = tmp_path / "dos.yaml"
        path.write_text(
            "duration: 1.0\n"
            "seed: 4\n"
            "attack_kind: dos\n"
            "attack_params: {flood_id: '0x000', gap: 0.01}\n"
            "normal_ids:\n"
            "  - {can_id: '0x316', period: 0.1}\n",
            encoding="utf-8",
        )
        spec = load_traffic_spec(path)
        assert spec.attack_kind is AttackKind.DOS
        assert spec.normal_ids[0].can_id == 0x316
        assert spec.attack_params["flood_id"] == 0
        assert spec.seed == 4

    def test_missing_spec_file(self, tmp_path):
        """测试规格文件不存在"""
        with pytest.raises(TrafficSpecError):
            load_traffic_spec(tmp_path / "missing.yaml")
