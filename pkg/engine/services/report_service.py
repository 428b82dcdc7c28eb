"""
Report Service - 명령 결과 보고서 모델과 출력 (사람용 표 / 기계용 record)
"""

import hashlib
import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

from pydantic import BaseModel, Field

from config.settings import REPORT_DIGITS
from services.approx_service import BoundedPosterior, bound_width_report
from services.exact_service import InferenceStats
from services.model_service import Context, RuleBase, ValidationReport

logger = logging.getLogger(__name__)


# ============================================
# 보고서 모델
# ============================================

class StepRecord(BaseModel):
    variable: str
    rules_combined: int
    rules_created: int
    rules_active: int
    factor_entries: int


class StatsRecord(BaseModel):
    engine: str
    ordering: List[str]
    initial_rules: int
    max_rules_created: int
    max_rules_active: int
    max_factor_entries: int
    steps: List[StepRecord]


class ValueBounds(BaseModel):
    low: float
    high: float
    width: float


class RunReport(BaseModel):
    """Result of infer / bounds."""

    command: str
    model: str
    input_digest: str
    query: str
    evidence: Dict[str, str]
    ordering: List[str]
    engine: str
    posterior: Optional[Dict[str, float]] = None
    bounds: Optional[Dict[str, ValueBounds]] = None
    exact: Optional[Dict[str, float]] = None
    contains_exact: Optional[bool] = None
    threshold: Optional[float] = None
    strategy: Optional[str] = None
    rule_count: Optional[int] = None
    stats: StatsRecord
    wall_time: float


class ViolationRecord(BaseModel):
    kind: str
    detail: str
    witness: Optional[Dict[str, str]] = None
    rule_ids: List[int] = Field(default_factory=list)


class ValidateReport(BaseModel):
    command: str = "validate"
    model: str
    input_digest: str
    kind: str
    valid: bool
    strategy: str
    rule_count: int
    violations: List[ViolationRecord]


class CompressRow(BaseModel):
    variable: str
    parents: Optional[int] = None
    table_rows: int
    table_entries: int
    rules_exact: int
    rules_threshold: int


class CompressReport(BaseModel):
    command: str = "compress"
    model: str
    input_digest: str
    threshold: float
    extreme_guard: bool
    multi_parent: bool = False
    rows: List[CompressRow]
    total: CompressRow
    output: Optional[str] = None


class CompareViolation(BaseModel):
    trial: int
    kind: str
    detail: str
    reproduce: str


class CompareReport(BaseModel):
    """No wall time: a fixed seed must give a byte-identical report."""

    command: str = "compare"
    model: str
    input_digest: str
    seed: int
    trials: int
    checked: int
    skipped: int
    thresholds: List[float]
    max_engine_gap: float
    violations: List[CompareViolation]


Report = Union[RunReport, ValidateReport, CompressReport, CompareReport]


# ============================================
# 변환 helper
# ============================================

def file_digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def named_context(variables, ctx: Optional[Context]) -> Optional[Dict[str, str]]:
    if ctx is None:
        return None
    return {variables[var].name: variables[var].domain[value] for var, value in ctx}


def stats_record(stats: InferenceStats) -> StatsRecord:
    return StatsRecord.model_validate(stats.to_dict())


def bounds_record(bp: BoundedPosterior) -> Dict[str, ValueBounds]:
    widths = bound_width_report(bp)
    return {
        value: ValueBounds(low=low, high=high, width=widths[value])
        for value, low, high in zip(bp.values, bp.lows, bp.highs)
    }


def validation_record(model: str, digest: str, kind: str, rb: RuleBase, report: ValidationReport) -> ValidateReport:
    return ValidateReport(
        model=model,
        input_digest=digest,
        kind=kind,
        valid=report.valid,
        strategy=report.strategy,
        rule_count=len(rb.rules),
        violations=[
            ViolationRecord(
                kind=v.kind,
                detail=v.detail,
                witness=named_context(rb.variables, v.witness),
                rule_ids=list(v.rule_ids),
            )
            for v in report.violations
        ],
    )


# ============================================
# 출력
# ============================================

class ReportService:
    """
    보고서 출력 서비스

    table: 사람이 읽는 표 (확률은 유효숫자 REPORT_DIGITS자리)
    record: pydantic JSON (float는 손실 없이 출력)
    """

    def __init__(self, digits: int = REPORT_DIGITS):
        self.digits = digits

    def number(self, x: float) -> str:
        return f"{x:.{self.digits}g}"

    def render(self, report: Report, fmt: str = "table") -> str:
        if fmt == "record":
            return report.model_dump_json(indent=2) + "\n"
        if isinstance(report, RunReport):
            return self._run_table(report)
        if isinstance(report, ValidateReport):
            return self._validate_table(report)
        if isinstance(report, CompressReport):
            return self._compress_table(report)
        return self._compare_table(report)

    def _header(self, report: Report) -> List[str]:
        return [f"{report.command}: {report.model} (sha256 {report.input_digest[:12]})"]

    def _run_table(self, report: RunReport) -> str:
        evidence = ", ".join(f"{k}={v}" for k, v in report.evidence.items()) or "none"
        lines = self._header(report) + [
            f"query: {report.query}   evidence: {evidence}   engine: {report.engine}",
            f"ordering: {', '.join(report.ordering) or '-'}",
        ]
        if report.threshold is not None:
            lines.append(f"threshold: {report.threshold}   strategy: {report.strategy}   rules: {report.rule_count}")
        lines.append("")

        if report.posterior is not None:
            lines.append(f"{'value':<16}{'P':>20}")
            for value, p in report.posterior.items():
                lines.append(f"{value:<16}{self.number(p):>20}")
        if report.bounds is not None:
            header = f"{'value':<16}{'low':>20}{'high':>20}{'width':>20}"
            if report.exact is not None:
                header += f"{'exact':>20}"
            lines.append(header)
            for value, b in report.bounds.items():
                row = f"{value:<16}{self.number(b.low):>20}{self.number(b.high):>20}{self.number(b.width):>20}"
                if report.exact is not None:
                    row += f"{self.number(report.exact[value]):>20}"
                lines.append(row)
            if report.contains_exact is not None:
                lines.append(f"contains exact posterior: {'yes' if report.contains_exact else 'NO'}")

        stats = report.stats
        lines += [
            "",
            f"max rules created: {stats.max_rules_created}   max rules active: {stats.max_rules_active}   "
            f"max factor entries: {stats.max_factor_entries}",
            f"wall time: {report.wall_time:.3f}s",
        ]
        return "\n".join(lines) + "\n"

    def _validate_table(self, report: ValidateReport) -> str:
        lines = self._header(report) + [
            f"{report.kind} model, {report.rule_count} rules, checked by {report.strategy}",
            "valid" if report.valid else f"INVALID: {len(report.violations)} violation(s)",
        ]
        for v in report.violations:
            lines.append(f"  [{v.kind}] {v.detail}")
            if v.witness:
                lines.append("    witness: " + ", ".join(f"{k}={val}" for k, val in v.witness.items()))
        return "\n".join(lines) + "\n"

    def _compress_table(self, report: CompressReport) -> str:
        th = self.number(report.threshold)
        lines = self._header(report) + [
            f"{'variable':<20}{'parents':>9}{'table rows':>12}{'table size':>12}{'R(0)':>10}{f'R({th})':>14}"
        ]
        for row in report.rows + [report.total]:
            parents = "" if row.parents is None else str(row.parents)
            lines.append(
                f"{row.variable:<20}{parents:>9}{row.table_rows:>12}{row.table_entries:>12}"
                f"{row.rules_exact:>10}{row.rules_threshold:>14}"
            )
        if report.output:
            lines.append(f"compressed rule base written to {report.output}")
        return "\n".join(lines) + "\n"

    def _compare_table(self, report: CompareReport) -> str:
        lines = self._header(report) + [
            f"seed {report.seed}, {report.trials} trials: {report.checked} checked, {report.skipped} skipped",
            f"thresholds: {', '.join(self.number(t) for t in report.thresholds)}",
            f"max engine gap: {report.max_engine_gap:.3e}",
        ]
        if not report.violations:
            lines.append("all engines agree and every interval contains the exact posterior")
        for v in report.violations:
            lines.append(f"  trial {v.trial} [{v.kind}] {v.detail}")
            lines.append(f"    reproduce: {v.reproduce}")
        return "\n".join(lines) + "\n"


_report_service_instance: Optional[ReportService] = None


def get_report_service() -> ReportService:
    """ReportService 싱글톤 인스턴스 반환"""
    global _report_service_instance
    if _report_service_instance is None:
        _report_service_instance = ReportService()
    return _report_service_instance
