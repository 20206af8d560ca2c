"""Fractional-order network models and their finite-memory forms.

A model couples several fractional difference orders through constant
matrices:

    sum_i A_i diff^{a_i} x[k+1] = sum_i B_i diff^{b_i} u[k]
                                  + sum_i G_i diff^{g_i} w[k],
    z[k] = C x[k] + v[k],

with everything before step zero taken as zero.  Provided the sum of
the A_i is invertible, the update can be solved into an explicit
growing-memory recursion

    x[k+1] = sum_{j>=1} Ac_j x[k-j+1] + sum_{j>=0} Bc_j u[k-j]
             + sum_{j>=0} Gc_j w[k-j],

whose lag matrices this module computes (`expand_model`).  Truncating
the state and input memories at depth v and stacking the retained lags
gives a linear companion realization (`build_v_approximation`); the
truncation error plus the disturbance channel form the residual term
(`residual_r`).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionViolationError, ModelError
from .fractional import gl_coefficients

__all__ = [
    "NoiseBounds",
    "FodnModel",
    "ExpandedModel",
    "VApproxLayout",
    "VApprox",
    "expand_model",
    "build_v_approximation",
    "residual_r",
    "disturbance_residuals",
    "load_model",
    "save_model",
    "COND_LIMIT",
]

# Condition number above which the state matrix sum counts as singular.
COND_LIMIT = 1e12


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


def _check_matrix(name: str, a: np.ndarray, shape: tuple[int, int]) -> None:
    if a.shape != shape:
        raise ModelError(f"{name} must have shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ModelError(f"{name} contains non-finite entries")


@dataclass(frozen=True)
class NoiseBounds:
    """Norm bounds on the disturbance and measurement noise samples."""

    b_w: float
    b_v: float

    def __post_init__(self) -> None:
        for name, val in (("b_w", self.b_w), ("b_v", self.b_v)):
            if not np.isfinite(val) or val < 0:
                raise ModelError(f"{name} must be finite and nonnegative, got {val}")


@dataclass(frozen=True)
class FodnModel:
    """Fractional-order network in implicit multi-order form.

    Attributes
    ----------
    state_terms : tuple of (matrix, order)
        Pairs (A_i, a_i); the A_i are n x n.
    input_terms : tuple of (matrix, order)
        Pairs (B_i, b_i); the B_i are n x m.  May be empty.
    disturbance_terms : tuple of (matrix, order)
        Pairs (G_i, g_i); the G_i are n x p.  May be empty.
    output_map : numpy.ndarray
        The q x n measurement matrix applied to the current state.
    """

    state_terms: tuple
    input_terms: tuple = ()
    disturbance_terms: tuple = ()
    output_map: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        if not self.state_terms:
            raise ModelError("at least one state term is required")

        def norm_terms(terms, what):
            out = []
            for idx, (mat, order) in enumerate(terms):
                mat = _frozen(mat)
                order = float(order)
                if mat.ndim != 2:
                    raise ModelError(f"{what}[{idx}] matrix must be 2-D")
                if not np.all(np.isfinite(mat)):
                    raise ModelError(f"{what}[{idx}] matrix has non-finite entries")
                if not np.isfinite(order) or order < 0:
                    raise ModelError(
                        f"{what}[{idx}] order must be finite and nonnegative, got {order}"
                    )
                out.append((mat, order))
            return tuple(out)

        state_terms = norm_terms(self.state_terms, "state_terms")
        n = state_terms[0][0].shape[0]
        for idx, (mat, _) in enumerate(state_terms):
            _check_matrix(f"state_terms[{idx}]", mat, (n, n))

        input_terms = norm_terms(self.input_terms, "input_terms")
        m = input_terms[0][0].shape[1] if input_terms else 0
        for idx, (mat, _) in enumerate(input_terms):
            _check_matrix(f"input_terms[{idx}]", mat, (n, m))

        dist_terms = norm_terms(self.disturbance_terms, "disturbance_terms")
        p = dist_terms[0][0].shape[1] if dist_terms else 0
        for idx, (mat, _) in enumerate(dist_terms):
            _check_matrix(f"disturbance_terms[{idx}]", mat, (n, p))

        if self.output_map is None:
            raise ModelError("output_map is required")
        output_map = _frozen(self.output_map)
        if output_map.ndim != 2 or output_map.shape[1] != n:
            raise ModelError(
                f"output_map must be q x {n}, got shape {output_map.shape}"
            )
        if not np.all(np.isfinite(output_map)):
            raise ModelError("output_map contains non-finite entries")

        a_sum = sum(mat for mat, _ in state_terms)
        cond = float(np.linalg.cond(a_sum))
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise AssumptionViolationError(
                "sum of state coefficient matrices is numerically singular "
                f"(condition number {cond:.3e}); the one-step update is undefined"
            )

        object.__setattr__(self, "state_terms", state_terms)
        object.__setattr__(self, "input_terms", input_terms)
        object.__setattr__(self, "disturbance_terms", dist_terms)
        object.__setattr__(self, "output_map", output_map)
        object.__setattr__(self, "_a_sum_cond", cond)

    @property
    def n(self) -> int:
        return self.state_terms[0][0].shape[0]

    @property
    def m(self) -> int:
        return self.input_terms[0][0].shape[1] if self.input_terms else 0

    @property
    def p(self) -> int:
        return self.disturbance_terms[0][0].shape[1] if self.disturbance_terms else 0

    @property
    def q(self) -> int:
        return self.output_map.shape[0]

    @property
    def dims(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "p": self.p,
            "q": self.q,
            "l": len(self.state_terms),
            "r": len(self.input_terms),
            "s": len(self.disturbance_terms),
        }


@dataclass(frozen=True)
class ExpandedModel:
    """Explicit lag-matrix form of a model, truncated at a finite horizon.

    ``A_check[j]`` multiplies x[k-j+1] in the update for x[k+1]; the
    j = 0 slot is a zero pad so indices align with lags.  ``B_check[j]``
    and ``G_check[j]`` multiply u[k-j] and w[k-j] and are valid from
    j = 0.  All three stacks run up to ``lag_horizon``.
    """

    A_check: np.ndarray
    B_check: np.ndarray
    G_check: np.ndarray
    a0_condition: float

    @property
    def lag_horizon(self) -> int:
        return self.A_check.shape[0] - 1

    @property
    def n(self) -> int:
        return self.A_check.shape[1]

    @property
    def m(self) -> int:
        return self.B_check.shape[2]

    @property
    def p(self) -> int:
        return self.G_check.shape[2]


def expand_model(model: FodnModel, horizon: int) -> ExpandedModel:
    """Solve the implicit update into explicit lag matrices up to a horizon.

    Parameters
    ----------
    model : FodnModel
    horizon : int
        Deepest lag J to materialize; one step of simulation at time k
        consumes lags up to k + 1.

    Returns
    -------
    ExpandedModel
    """
    horizon = int(horizon)
    if horizon < 1:
        raise ModelError(f"expansion horizon must be >= 1, got {horizon}")
    n, m, p = model.n, model.m, model.p

    def hat_stack(terms, cols):
        out = np.zeros((horizon + 1, n, cols))
        for mat, order in terms:
            coeffs = gl_coefficients(order, horizon).values
            out += coeffs[:, None, None] * mat[None, :, :]
        return out

    a_hat = hat_stack(model.state_terms, n)
    b_hat = hat_stack(model.input_terms, m) if m else np.zeros((horizon + 1, n, 0))
    g_hat = hat_stack(model.disturbance_terms, p) if p else np.zeros((horizon + 1, n, 0))

    a0 = a_hat[0]
    cond = float(np.linalg.cond(a0))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise AssumptionViolationError(
            "sum of state coefficient matrices is numerically singular "
            f"(condition number {cond:.3e}); cannot expand the update"
        )

    a_check = -np.linalg.solve(a0, a_hat)
    a_check[0] = 0.0
    b_check = np.linalg.solve(a0, b_hat) if m else b_hat
    g_check = np.linalg.solve(a0, g_hat) if p else g_hat
    return ExpandedModel(
        A_check=_frozen(a_check),
        B_check=_frozen(b_check),
        G_check=_frozen(g_check),
        a0_condition=cond,
    )


@dataclass(frozen=True)
class VApproxLayout:
    """Block layout of the stacked finite-memory state.

    The augmented vector is [x[k], .., x[k-v+1], u[k-1], .., u[k-v]];
    the input registers are dropped entirely when m = 0.
    """

    n: int
    m: int
    v: int

    @property
    def dim(self) -> int:
        return self.v * (self.n + self.m)

    def state_slice(self, i: int) -> slice:
        """Rows holding x[k - i], for 0 <= i < v."""
        if not 0 <= i < self.v:
            raise ValueError(f"state block index {i} outside [0, {self.v})")
        return slice(i * self.n, (i + 1) * self.n)

    def input_slice(self, i: int) -> slice:
        """Rows holding u[k - 1 - i], for 0 <= i < v."""
        if self.m == 0:
            raise ValueError("layout has no input registers (m = 0)")
        if not 0 <= i < self.v:
            raise ValueError(f"input block index {i} outside [0, {self.v})")
        base = self.v * self.n
        return slice(base + i * self.m, base + (i + 1) * self.m)

    def transition_mask(self) -> np.ndarray:
        """Boolean mask of entries allowed to be nonzero in the transition matrix."""
        d = self.dim
        mask = np.zeros((d, d), dtype=bool)
        mask[self.state_slice(0), :] = True
        for i in range(1, self.v):
            mask[self.state_slice(i), self.state_slice(i - 1)] = True
        if self.m:
            for i in range(1, self.v):
                mask[self.input_slice(i), self.input_slice(i - 1)] = True
        return mask


@dataclass(frozen=True)
class VApprox:
    """Linear companion realization of the depth-v truncated recursion."""

    A_tilde: np.ndarray
    B_tilde: np.ndarray
    G_tilde: np.ndarray
    C: np.ndarray
    v: int
    layout: VApproxLayout
    a0_condition: float

    @property
    def dim(self) -> int:
        return self.A_tilde.shape[0]

    def lift_initial_state(self, x0) -> np.ndarray:
        """Stack an initial state over zero history registers."""
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        n = self.layout.n
        if x0.shape[0] != n:
            raise ModelError(f"initial state must have length {n}, got {x0.shape[0]}")
        full = np.zeros(self.dim)
        full[:n] = x0
        return full


def build_v_approximation(expanded: ExpandedModel, model: FodnModel, v: int) -> VApprox:
    """Assemble the companion matrices for a truncation depth.

    Parameters
    ----------
    expanded : ExpandedModel
        Lag matrices; must reach at least depth v.
    model : FodnModel
        Source model, consulted for the output map.
    v : int
        Truncation depth, 1 <= v <= expanded.lag_horizon.

    Returns
    -------
    VApprox
    """
    v = int(v)
    if v < 1:
        raise ModelError(f"truncation depth must be >= 1, got {v}")
    if v > expanded.lag_horizon:
        raise ModelError(
            f"truncation depth {v} exceeds expanded horizon {expanded.lag_horizon}"
        )
    n, m = expanded.n, expanded.m
    if (model.n, model.m) != (n, m):
        raise ModelError(
            f"model dims (n={model.n}, m={model.m}) disagree with expansion "
            f"(n={n}, m={m})"
        )
    layout = VApproxLayout(n=n, m=m, v=v)
    d = layout.dim

    a = np.zeros((d, d))
    top = layout.state_slice(0)
    for j in range(1, v + 1):
        a[top, layout.state_slice(j - 1)] = expanded.A_check[j]
    if m:
        for j in range(1, v + 1):
            a[top, layout.input_slice(j - 1)] = expanded.B_check[j]
    for i in range(1, v):
        a[layout.state_slice(i), layout.state_slice(i - 1)] = np.eye(n)
    if m:
        for i in range(1, v):
            a[layout.input_slice(i), layout.input_slice(i - 1)] = np.eye(m)

    b = np.zeros((d, m))
    if m:
        b[top] = expanded.B_check[0]
        b[layout.input_slice(0)] = np.eye(m)

    g = np.zeros((d, n))
    g[top] = np.eye(n)

    c = np.zeros((model.q, d))
    c[:, :n] = model.output_map

    return VApprox(
        A_tilde=_frozen(a),
        B_tilde=_frozen(b),
        G_tilde=_frozen(g),
        C=_frozen(c),
        v=v,
        layout=layout,
        a0_condition=expanded.a0_condition,
    )


def residual_r(
    history,
    expanded: ExpandedModel,
    v: int,
    k: int,
    include_truncation_tail: bool = True,
    include_disturbance: bool = True,
) -> np.ndarray:
    """Exact forcing term absorbed by the depth-v companion form at step k.

    The residual collects the state and input lags beyond depth v plus
    the whole disturbance channel:

        r[k] = sum_{j=v+1}^{k+1} Ac_j x[k-j+1]
             + sum_{j=v+1}^{k}   Bc_j u[k-j]
             + sum_{j=0}^{k}     Gc_j w[k-j].

    Parameters
    ----------
    history : object
        Anything with ``states`` (length >= k+1 rows), ``inputs`` and
        ``disturbances`` arrays indexed by absolute step.
    expanded : ExpandedModel
    v : int
        Truncation depth of the companion form the residual feeds.
    k : int
        Step to evaluate at; requires k >= 0.
    include_truncation_tail, include_disturbance : bool
        Select the truncation-tail sums or the disturbance channel;
        both are on for the exact residual.

    Returns
    -------
    numpy.ndarray
        Residual vector of length n.
    """
    if k < 0:
        raise ModelError(f"step must be nonnegative, got {k}")
    if not 1 <= v <= expanded.lag_horizon:
        raise ModelError(
            f"truncation depth {v} outside [1, {expanded.lag_horizon}]"
        )
    n, m, p = expanded.n, expanded.m, expanded.p
    out = np.zeros(n)

    needed = 0
    if include_truncation_tail and k >= v:
        needed = k + 1
    if include_disturbance and p:
        needed = max(needed, k)
    if needed > expanded.lag_horizon:
        raise ModelError(
            f"residual at step {k} needs lags up to {needed}, but the "
            f"expansion stops at {expanded.lag_horizon}; re-expand deeper"
        )

    if include_truncation_tail and k >= v:
        states = np.asarray(history.states, dtype=float)
        if states.shape[0] < k - v + 1 or states.shape[1] != n:
            raise ModelError(
                f"history.states must cover steps 0..{k - v} with width {n}"
            )
        # lags j = v+1 .. k+1 hit states k-v .. 0 in reverse order
        out += np.einsum(
            "jab,jb->a", expanded.A_check[v + 1 : k + 2], states[k - v :: -1]
        )
        if m and k >= v + 1:
            inputs = np.asarray(history.inputs, dtype=float)
            if inputs.shape[0] < k - v or inputs.shape[1] != m:
                raise ModelError(
                    f"history.inputs must cover steps 0..{k - v - 1} with width {m}"
                )
            out += np.einsum(
                "jab,jb->a", expanded.B_check[v + 1 : k + 1], inputs[k - v - 1 :: -1]
            )

    if include_disturbance and p:
        dist = np.asarray(history.disturbances, dtype=float)
        if dist.shape[0] < k + 1 or dist.shape[1] != p:
            raise ModelError(
                f"history.disturbances must cover steps 0..{k} with width {p}"
            )
        out += np.einsum("jab,jb->a", expanded.G_check[: k + 1], dist[k::-1])

    return out


def disturbance_residuals(expanded: ExpandedModel, disturbances) -> np.ndarray:
    """Residual sequence carrying only the disturbance channel.

    Used to drive the companion form as a simulator in its own right,
    where no deeper exact history exists to truncate.

    Returns an (N, n) array with row k equal to
    sum_{j=0}^{k} Gc_j w[k-j].
    """
    w = np.asarray(disturbances, dtype=float)
    if w.ndim != 2 or w.shape[1] != expanded.p:
        raise ModelError(
            f"disturbances must be N x {expanded.p}, got shape {w.shape}"
        )
    steps, n = w.shape[0], expanded.n
    if steps - 1 > expanded.lag_horizon and expanded.p:
        raise ModelError(
            f"disturbance sequence of length {steps} needs lags up to "
            f"{steps - 1}, but the expansion stops at {expanded.lag_horizon}"
        )
    out = np.zeros((steps, n))
    for k in range(steps):
        if expanded.p:
            out[k] = np.einsum("jab,jb->a", expanded.G_check[: k + 1], w[k::-1])
    return out


def _terms_to_json(terms, mat_key: str, order_key: str):
    return [
        {mat_key: mat.tolist(), order_key: order} for mat, order in terms
    ]


def save_model(model: FodnModel, path) -> None:
    """Write a model to a JSON file."""
    doc = {
        "dims": model.dims,
        "state_terms": _terms_to_json(model.state_terms, "A", "a"),
        "input_terms": _terms_to_json(model.input_terms, "B", "b"),
        "disturbance_terms": _terms_to_json(model.disturbance_terms, "G", "g"),
        "C": model.output_map.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _json_terms(doc, key: str, mat_key: str, order_key: str):
    raw = doc.get(key, [])
    if not isinstance(raw, list):
        raise ModelError(f"'{key}' must be a list")
    terms = []
    for idx, entry in enumerate(raw):
        if not isinstance(entry, dict) or mat_key not in entry or order_key not in entry:
            raise ModelError(
                f"'{key}[{idx}]' must be an object with '{mat_key}' and '{order_key}'"
            )
        try:
            mat = np.array(entry[mat_key], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ModelError(f"'{key}[{idx}].{mat_key}' is not a numeric matrix: {exc}")
        terms.append((mat, entry[order_key]))
    return terms


def load_model(path) -> FodnModel:
    """Read a model from a JSON file, validating dimensions."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ModelError(f"cannot read model file {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ModelError(f"model file {path} is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ModelError("model document must be a JSON object")
    if "C" not in doc:
        raise ModelError("model document lacks the output map 'C'")

    model = FodnModel(
        state_terms=_json_terms(doc, "state_terms", "A", "a"),
        input_terms=_json_terms(doc, "input_terms", "B", "b"),
        disturbance_terms=_json_terms(doc, "disturbance_terms", "G", "g"),
        output_map=np.array(doc["C"], dtype=float),
    )

    declared = doc.get("dims")
    if declared is not None:
        actual = model.dims
        for key, val in declared.items():
            if key in actual and actual[key] != val:
                raise ModelError(
                    f"declared dims['{key}'] = {val} disagrees with the "
                    f"matrices ({actual[key]})"
                )
    return model
