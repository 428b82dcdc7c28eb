"""
Engine exceptions
모든 오류는 사람이 읽을 수 있는 detail 메시지와 명령행 종료 코드를 함께 가진다
"""

from typing import Optional


class InferenceError(Exception):
    """
    Base error for every engine failure

    Args:
        detail: 오류 설명
        exit_code: 명령행에서 사용할 종료 코드 (None이면 클래스 기본값)
    """

    exit_code = 1

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code


# ============================================
# 속성/검증 위반 (exit 1)
# ============================================

class MalformedRuleBase(InferenceError):
    """A variable has zero or several applicable rules in some context."""

    def __init__(self, detail: str, witness=None):
        super().__init__(detail)
        self.witness = witness


class EnumerationBudgetExceeded(InferenceError):
    pass


class ResourceLimit(InferenceError):
    pass


# ============================================
# 입력 오류 (exit 2)
# ============================================

class InvalidInput(InferenceError):
    exit_code = 2


class ModelSyntaxError(InvalidInput):
    """Grammar error with its 1-based source position."""

    def __init__(self, line: int, column: int, expectation: str, found: str = ""):
        detail = f"line {line}, column {column}: expected {expectation}"
        if found:
            detail += f", found {found!r}"
        super().__init__(detail)
        self.line = line
        self.column = column
        self.expectation = expectation


class ModelSemanticError(InvalidInput):
    def __init__(self, detail: str, line: Optional[int] = None, column: Optional[int] = None):
        if line is not None:
            detail = f"line {line}, column {column}: {detail}"
        super().__init__(detail)
        self.line = line
        self.column = column


class InvalidQuery(InvalidInput):
    pass


class InvalidTarget(InvalidInput):
    pass


class IncompleteFamily(InvalidInput):
    pass


class OutOfRange(InvalidInput):
    pass


# ============================================
# 불가능한 증거 (exit 3)
# ============================================

class ImpossibleEvidence(InferenceError):
    exit_code = 3
