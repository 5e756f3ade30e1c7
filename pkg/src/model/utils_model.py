from dataclasses import dataclass, field
from typing import Any


@dataclass
class CheckResult:
    """One line of a validation report: observed value against the declared bound."""

    name: str
    passed: bool
    observed: float | None = None
    declared: float | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "observed": None if self.observed is None else float(self.observed),
            "declared": None if self.declared is None else float(self.declared),
            "detail": self.detail,
        }


@dataclass
class ValidationReport:
    """
    Collection of pass/fail checks. Failures are reported here, never raised.

    `verdict` overrides the default all-checks-pass rule when a report combines
    alternative assumption sets.
    """

    title: str
    checks: list[CheckResult] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)
    verdict: bool | None = None

    def add(self, name: str, passed: bool, observed=None, declared=None, detail: str = "") -> CheckResult:
        check = CheckResult(name, bool(passed), observed, declared, detail)
        self.checks.append(check)
        return check

    def get(self, name: str) -> CheckResult:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def group_passed(self, prefix: str) -> bool:
        group = [c for c in self.checks if c.name.startswith(prefix)]
        return bool(group) and all(c.passed for c in group)

    @property
    def passed(self) -> bool:
        if self.verdict is not None:
            return self.verdict
        return all(c.passed for c in self.checks)

    def merge(self, other: "ValidationReport") -> "ValidationReport":
        merged = ValidationReport(self.title, list(self.checks) + list(other.checks), {**self.metadata, **other.metadata})
        if self.verdict is not None or other.verdict is not None:
            merged.verdict = self.passed and other.passed
        return merged

    def to_dict(self) -> dict:
        return {
            "title": self.title,
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
            "metadata": self.metadata,
        }
