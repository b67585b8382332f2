"""The residual tree: words, memoized node residuals and dissipated pieces.

Words are tuples of 1-based letters. Node ``w`` carries the residual ``R_w``;
its children are obtained in one pass from ``sqrt(R_w)``, which yields every
``R_wj`` and ``D_wj`` at once.
"""

import numpy as np

from ._backend import kernel
from .errors import (
    BudgetExceededError,
    DimensionMismatchError,
    EmptyWordError,
    InvalidWordError,
)
from .operators import SQRT_FLOOR, PsdOperator

DEFAULT_BUDGET = 2_000_000


def format_word(w, m):
    """Digits for alphabets up to 9 letters, comma-separated integers beyond."""
    if m <= 9:
        return "".join(str(j) for j in w)
    return ",".join(str(j) for j in w)


def parse_word(text, m):
    text = text.strip()
    if not text:
        return ()
    try:
        letters = tuple(int(t) for t in (text.split(",") if m > 9 else text))
    except ValueError as exc:
        raise InvalidWordError(f"cannot parse word {text!r}") from exc
    return check_word(letters, m)


def check_word(w, m):
    w = tuple(int(j) for j in w)
    for j in w:
        if not 1 <= j <= m:
            raise InvalidWordError(f"letter {j} outside 1..{m}")
    return w


def level_size(m, depth):
    """Number of nodes in a complete tree of the given depth."""
    return sum(m ** k for k in range(depth + 1))


class _Node:
    __slots__ = ("residual", "children")

    def __init__(self, residual):
        self.residual = residual
        self.children = None  # (residual ops, dissipation ops) once expanded


class TreeCache:
    """Memoized residual tree for one family and root.

    In ``"path"`` mode only the ancestors of the most recently requested word
    are kept; ``"exhaustive"`` keeps every visited node. Either way more than
    ``budget`` cached nodes raises ``BudgetExceededError``. Not safe for
    concurrent writers; give each worker its own cache.
    """

    def __init__(self, family, root, budget=DEFAULT_BUDGET, mode="path"):
        if mode not in ("path", "exhaustive"):
            raise ValueError(f"mode must be 'path' or 'exhaustive', not {mode!r}")
        if root.dim != family.dim:
            raise DimensionMismatchError("root and family disagree on dimension")
        self.family = family
        # the tree always takes roots with the eigenvalue floor applied
        self.root = PsdOperator(root.matrix, floor=SQRT_FLOOR)
        self.budget = budget
        self.mode = mode
        self._nodes = {(): _Node(self.root)}
        self.validated_specs = {}

    @property
    def m(self):
        return self.family.m

    def __len__(self):
        return len(self._nodes)

    def check_budget(self, depth):
        """Raise unless a complete tree of this depth fits the budget."""
        need = level_size(self.m, depth)
        if need > self.budget:
            raise BudgetExceededError(
                f"depth {depth} with m = {self.m} needs {need} nodes, budget is {self.budget}"
            )

    def _expand(self, node):
        if node.children is None:
            d = self.family.dim
            if node.residual.is_zero:
                zeros = np.zeros((self.m, d, d), dtype=np.complex128)
                res, diss = zeros, zeros
            else:
                res, diss = kernel.split_step(node.residual.sqrt, self.family.projections)
            node.children = (
                [PsdOperator(r, floor=SQRT_FLOOR) for r in res],
                [PsdOperator(q) for q in diss],
            )
        return node.children

    def _node(self, w):
        w = check_word(w, self.m)
        node = self._nodes.get(w)
        if node is not None:
            return node
        k = len(w)
        while w[:k] not in self._nodes:
            k -= 1
        if self.mode == "path":
            self._nodes = {w[:i]: self._nodes[w[:i]] for i in range(k + 1)}
        for i in range(k, len(w)):
            if len(self._nodes) >= self.budget:
                raise BudgetExceededError(f"tree cache budget of {self.budget} nodes exhausted")
            residuals, _ = self._expand(self._nodes[w[:i]])
            node = _Node(residuals[w[i] - 1])
            self._nodes[w[: i + 1]] = node
        return node

    def residual(self, w):
        return self._node(w).residual

    def dissipation(self, w):
        w = check_word(w, self.m)
        if not w:
            raise EmptyWordError("the root has no dissipated piece")
        _, diss = self._expand(self._node(w[:-1]))
        return diss[w[-1] - 1]

    def children(self, w):
        """``(residuals, dissipations)`` of the m children of ``w``, without caching them as nodes."""
        return self._expand(self._node(w))


def node_residual(cache, w):
    """``R_w``; the empty word gives the root."""
    return cache.residual(w)


def node_dissipation(cache, w):
    """``D_w``, the piece removed on the step into the nonempty word ``w``."""
    return cache.dissipation(w)


def child_dissipations(cache, w):
    """``[D_w1, ..., D_wm]``."""
    return list(cache.children(w)[1])


def branch_telescoping_defect(cache, w):
    """Frobenius norm of ``R_0 - R_w - sum_k D_{w|k}``."""
    w = check_word(w, cache.m)
    total = cache.root.matrix - cache.residual(w).matrix
    for k in range(1, len(w) + 1):
        total = total - cache.dissipation(w[:k]).matrix
    return float(np.linalg.norm(total))
