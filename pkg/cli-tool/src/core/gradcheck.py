"""
Finite-difference verification of backward rules.

The checked objective is a fixed random projection of the operator output,
sum(out * R), so every output element contributes to the gradient.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from src.core.tensor import Tensor, no_grad
from src.utils.error_handling import ErrorContext, NumericalError

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-5


@dataclass
class GradCheckReport:
    """Outcome of one gradient check"""
    name: str
    tolerance: float
    max_rel_error: float
    per_input: Dict[str, float] = field(default_factory=dict)
    checked_entries: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def to_dict(self) -> Dict[str, object]:
        return {
            "name": self.name,
            "tolerance": self.tolerance,
            "max_rel_error": self.max_rel_error,
            "per_input": dict(self.per_input),
            "checked_entries": self.checked_entries,
            "passed": self.passed,
        }


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries from dominating"""
    floor = 1e-4 * float(np.max(np.abs(analytic), initial=0.0)) + 1e-8
    denominator = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denominator


def _objective(output: Tensor, projection: np.ndarray) -> float:
    return float(np.sum(output.data * projection))


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], tolerance: float = 1e-4,
               step: float = DEFAULT_STEP, seed: int = 0, name: Optional[str] = None,
               max_entries: Optional[int] = None) -> GradCheckReport:
    """
    Compare analytic gradients of fn against central finite differences.

    Args:
        fn: builds the output tensor from `inputs`
        inputs: tensors; those with requires_grad are checked
        tolerance: pass threshold on the max relative error
        step: finite-difference step
        seed: seed of the output projection and of entry sampling
        max_entries: check at most this many random entries per input

    Raises:
        NumericalError: if fn is not deterministic or an input is non-finite
    """
    label = name or getattr(fn, "__name__", "op")
    for t in inputs:
        if not np.all(np.isfinite(t.data)):
            raise NumericalError(f"grad_check input for {label} is not finite", ErrorContext(operation="grad_check"))

    rng = np.random.default_rng(seed)
    output = fn(*inputs)
    with no_grad():
        repeat = fn(*inputs)
    if not np.array_equal(output.data, repeat.data):
        raise NumericalError(f"{label} is not deterministic; gradient check is meaningless",
                             ErrorContext(operation="grad_check", details={"op": label}))

    projection = rng.standard_normal(output.shape).astype(output.data.dtype)
    for t in inputs:
        t.zero_grad()
    output.backward(projection)

    report = GradCheckReport(name=label, tolerance=tolerance, max_rel_error=0.0)
    for index, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = np.sort(rng.choice(flat.size, size=max_entries, replace=False))

        numeric = np.empty(entries.size)
        with no_grad():
            for k, entry in enumerate(entries):
                original = flat[entry]
                flat[entry] = original + step
                plus = _objective(fn(*inputs), projection)
                flat[entry] = original - step
                minus = _objective(fn(*inputs), projection)
                flat[entry] = original
                numeric[k] = (plus - minus) / (2.0 * step)

        errors = relative_errors(analytic.reshape(-1)[entries], numeric)
        worst = float(errors.max()) if errors.size else 0.0
        report.per_input[t.name or f"input{index}"] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
        report.checked_entries += int(entries.size)

    logger.debug(f"grad_check {label}: max rel error {report.max_rel_error:.3e} over {report.checked_entries} entries")
    return report


def grad_check_parameters(loss_fn: Callable[[], Tensor], params: Dict[str, Tensor], samples: int = 50,
                          tolerance: float = 1e-3, step: float = DEFAULT_STEP, seed: int = 0) -> GradCheckReport:
    """
    Check d(loss)/d(param) for a random sample of scalar entries drawn
    across all named parameters of a model.
    """
    rng = np.random.default_rng(seed)
    names = list(params)
    sizes = np.array([params[n].data.size for n in names])
    picks = rng.choice(int(sizes.sum()), size=min(samples, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    for t in params.values():
        t.zero_grad()
    loss = loss_fn()
    loss.backward()

    chosen: List[tuple] = []
    for pick in np.sort(picks):
        owner = int(np.searchsorted(offsets, pick, side="right") - 1)
        chosen.append((names[owner], int(pick - offsets[owner])))

    analytic = np.empty(len(chosen))
    numeric = np.empty(len(chosen))
    with no_grad():
        for k, (param_name, entry) in enumerate(chosen):
            t = params[param_name]
            flat = t.data.reshape(-1)
            grad = t.grad.reshape(-1) if t.grad is not None else np.zeros(flat.size)
            analytic[k] = grad[entry]
            original = flat[entry]
            flat[entry] = original + step
            plus = float(loss_fn().data.sum())
            flat[entry] = original - step
            minus = float(loss_fn().data.sum())
            flat[entry] = original
            numeric[k] = (plus - minus) / (2.0 * step)

    errors = relative_errors(analytic, numeric)
    report = GradCheckReport(name="model_parameters", tolerance=tolerance,
                             max_rel_error=float(errors.max()) if errors.size else 0.0,
                             checked_entries=len(chosen))
    for (param_name, _), err in zip(chosen, errors):
        report.per_input[param_name] = max(report.per_input.get(param_name, 0.0), float(err))
    return report
