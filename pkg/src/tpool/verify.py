"""Numerical self-checks: kernel identities, dimensions and gradient audits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import normact, pooling
from .tced.model import TrainConfig, _run, activation_pattern, build_model, cross_entropy, loss_and_grads

KERNEL_TOL = 1e-6
GRAD_TOL = 1e-4
# denominators below this are finite-difference noise, not gradient signal
GRAD_FLOOR = 1e-6
MAX_SKIP_FRACTION = 0.01

PUBLISHED_DIMS_128 = {
    "coupled": 16384,
    "coupled_compact": 8256,
    "decoupled": 16512,
    "decoupled_compact": 8384,
}
AUDIT_POOLINGS = ("max", "coupled", "decoupled", "coupled_compact", "decoupled_compact")


@dataclass
class Check:
    name: str
    value: float
    tol: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        if self.tol == 0:
            return f"{self.name}: {status}{extra}"
        return f"{self.name} max rel err {self.value:.3e} <= {self.tol:g}: {status}{extra}"


def _random_instance(rng):
    T = int(rng.integers(1, 65))
    d = int(rng.integers(1, 17))
    window = int(rng.choice([1, 5, 11]))
    x = rng.normal(size=(T, d))
    w = pooling.PoolingWeights(*(rng.uniform(-1, 1, window) for _ in range(3)))
    return x, window, w


def kernel_equivalence(n_instances: int = 100, seed: int = 0, fault: bool = False) -> list[Check]:
    """Pooled-vector Gram matrices against direct kernel evaluation.

    For every instance and every pair of centres, the explicit form, the
    compact form and the kernel must agree to ``1e-6 * (1 + |kernel|)``.
    ``fault`` perturbs one weight on the compact path only (negative control).
    """
    rng = np.random.default_rng(seed)
    worst = {"coupled": (0.0, -1), "decoupled": (0.0, -1)}
    for n in range(n_instances):
        x, window, w = _random_instance(rng)
        w_compact = w
        if fault:
            w_compact = pooling.PoolingWeights(w.omega.copy(), w.p.copy(), w.q.copy())
            w_compact.omega[0] += 1e-3
            w_compact.q[0] += 1e-3
        for family, kernel_fn in (("coupled", pooling.kernel_matrix_coupled),
                                  ("decoupled", pooling.kernel_matrix_decoupled)):
            B = pooling.pool_forward(x, pooling.PoolingConfig(family, window, 1), w)[0]
            P = pooling.pool_forward(x, pooling.PoolingConfig(f"{family}_compact", window, 1), w_compact)[0]
            K = kernel_fn(x, w)
            gram_b, gram_p = B @ B.T, P @ P.T
            scale = 1.0 + np.abs(K)
            err = max(np.max(np.abs(gram_b - K) / scale), np.max(np.abs(gram_p - K) / scale),
                      np.max(np.abs(gram_b - gram_p) / scale))
            if err > worst[family][0]:
                worst[family] = (float(err), n)
    return [Check(f"kernel_{fam}", err, KERNEL_TOL, err <= KERNEL_TOL,
                  f"{n_instances} instances, worst instance {idx}")
            for fam, (err, idx) in worst.items()]


def hvec_identity(n: int = 200, seed: int = 0) -> Check:
    """``<hvec A, hvec B> = <A, B>_F`` on random symmetric matrices."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        d = int(rng.integers(1, 17))
        A = rng.normal(size=(d, d))
        B = rng.normal(size=(d, d))
        A, B = A + A.T, B + B.T
        fro = float(np.sum(A * B))
        err = abs(float(pooling.hvec(A) @ pooling.hvec(B)) - fro) / (1.0 + abs(fro))
        worst = max(worst, err)
    return Check("hvec_frobenius", worst, 1e-12, worst <= 1e-12, f"{n} matrix pairs")


def dimension_table(d: int = 128) -> list[tuple[str, int, int | None]]:
    """Rows ``(kind, output_dim(kind, d), published value or None)``."""
    published = PUBLISHED_DIMS_128 if d == 128 else {}
    return [(k, pooling.output_dim(k, d), published.get(k))
            for k in ("coupled", "coupled_compact", "decoupled", "decoupled_compact")]


def dimension_checks() -> list[Check]:
    return [Check(f"output_dim[{kind}, d=128] = {got}", float(abs(got - want)), 0.0, got == want,
                  f"published {want}")
            for kind, got, want in dimension_table(128)]


@dataclass
class AuditResult:
    pooling: str
    activation: str
    max_rel_err: float
    checked: int
    skipped: int
    worst: str

    @property
    def passed(self) -> bool:
        total = self.checked + self.skipped
        return self.max_rel_err <= GRAD_TOL and self.skipped <= MAX_SKIP_FRACTION * total


def tiny_model(pool_kind: str, act_kind: str, seed: int = 0):
    """The audit model (L=1, 8 filters, kernel 5, d=6, C=3) moved off its symmetric init."""
    cfg = TrainConfig(pooling=pool_kind, activation=act_kind, filters=(8,), kernel_size=5,
                      window=5, seed=seed)
    model = build_model(cfg, 6, 3)
    rng = np.random.default_rng(seed + 1)
    for name, p in model.params.items():
        if name.endswith((".omega", ".p", ".q")):
            model.params[name] = p + rng.uniform(-0.1, 0.1, p.shape)
        elif name.endswith(".bias"):
            model.params[name] = rng.normal(0.0, 0.1, p.shape)
        elif name.endswith(".theta"):
            model.params[name] = rng.uniform(0.5, 1.5, p.shape)
    x = rng.normal(size=(16, 6))
    y = rng.integers(0, 3, 16)
    return model, x, y


def _same(pa, pb) -> bool:
    return all((a is None and b is None) or np.array_equal(a, b) for a, b in zip(pa, pb))


def gradient_audit(pool_kind: str, act_kind: str, seed: int = 0, step: float = 1e-5) -> AuditResult:
    """Central differences against analytic gradients for every parameter.

    Coordinates where the +/- perturbations change a discrete forward
    decision (ReLU mask, argmax) straddle a kink; they are retried with a
    step 100x smaller and skipped if that still straddles.
    """
    model, x, y = tiny_model(pool_kind, act_kind, seed)
    _, grads = loss_and_grads(model, x, y)

    def probe(p, idx, old, h):
        p[idx] = old + h
        lp, pp = cross_entropy(_run(model, x)[0], y), activation_pattern(model, x)
        p[idx] = old - h
        lm, pm = cross_entropy(_run(model, x)[0], y), activation_pattern(model, x)
        p[idx] = old
        return (lp - lm) / (2 * h), _same(pp, pm)

    worst, where, checked, skipped = 0.0, "", 0, 0
    for name in sorted(model.params):
        p = model.params[name]
        for idx in np.ndindex(p.shape):
            old = p[idx]
            num, smooth = probe(p, idx, old, step)
            if not smooth:
                num, smooth = probe(p, idx, old, step / 100)
            if not smooth:
                skipped += 1
                continue
            ana = grads[name][idx]
            rel = abs(ana - num) / max(abs(ana), abs(num), GRAD_FLOOR)
            checked += 1
            if rel > worst:
                worst, where = rel, f"{name}{list(idx)}"
    return AuditResult(pool_kind, act_kind, float(worst), checked, skipped, where)


def gradient_checks(seed: int = 0) -> list[Check]:
    out = []
    for pk in AUDIT_POOLINGS:
        for ak in normact.ACTIVATIONS:
            r = gradient_audit(pk, ak, seed)
            out.append(Check(f"gradient[{pk}, {ak}]", r.max_rel_err, GRAD_TOL, r.passed,
                             f"{r.checked} coords, {r.skipped} skipped at kinks"))
    return out


def run_all(seeds: int = 100, seed: int = 0, fault: bool = False, gradients: bool = True) -> list[Check]:
    checks = kernel_equivalence(seeds, seed, fault)
    checks.append(hvec_identity(seed=seed))
    checks.extend(dimension_checks())
    if gradients:
        checks.extend(gradient_checks(seed))
    return checks
