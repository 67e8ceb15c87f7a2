"""Hypothesis strategies for expression trees."""

from hypothesis import strategies as st

from mixedcurv.exprlang import Bin, Call, FUNCTIONS, Neg, Num, Sym

numbers = st.one_of(
    st.integers(min_value=-50, max_value=50).map(float),
    st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False, allow_subnormal=False),
).filter(lambda v: not (v == 0 and str(v).startswith("-")))

coords = st.sampled_from([Sym("x0"), Sym("x1"), Sym("x2")])
params = st.sampled_from([Sym("k"), Sym("pi")])


def constant_trees(depth=2):
    leaf = st.one_of(numbers.map(Num), params)
    return st.recursive(leaf, lambda kids: st.one_of(kids.map(Neg), st.tuples(st.sampled_from("+-*/"), kids, kids).map(lambda t: Bin(*t))), max_leaves=depth * 2)


def syntax_trees():
    """Arbitrary well-formed trees (exponents never mention coordinates)."""
    leaf = st.one_of(numbers.map(Num), coords, params)

    def extend(kids):
        return st.one_of(
            kids.map(Neg),
            st.tuples(st.sampled_from(FUNCTIONS), kids).map(lambda t: Call(*t)),
            st.tuples(st.sampled_from("+-*/"), kids, kids).map(lambda t: Bin(*t)),
            st.tuples(kids, constant_trees()).map(lambda t: Bin("^", *t)),
        )

    return st.recursive(leaf, extend, max_leaves=24)


def smooth_trees(budget=6):
    """Trees of depth <= budget that stay finite and smooth on [-1, 1]^3."""
    leaf = st.one_of(st.floats(min_value=-2, max_value=2, allow_nan=False).map(lambda v: Num(round(v, 3))), coords)
    if budget <= 0:
        return leaf
    sub = st.deferred(lambda: smooth_trees(budget - 1))
    options = [
        leaf,
        st.tuples(st.sampled_from(["sin", "cos", "tanh", "exp"]), sub).map(lambda t: Call(*t)),
        st.tuples(st.sampled_from("+-*"), sub, sub).map(lambda t: Bin(*t)),
        sub.map(Neg),
    ]
    if budget >= 3:
        inner = st.deferred(lambda: smooth_trees(budget - 3))
        options += [
            inner.map(lambda u: Call("log", Bin("+", Num(1.0), Bin("*", u, u)))),
            inner.map(lambda u: Call("sqrt", Bin("+", Num(1.0), Bin("*", u, u)))),
            inner.map(lambda u: Bin("/", Num(1.0), Bin("+", Num(2.0), Call("sin", u)))),
        ]
    if budget >= 2:
        inner = st.deferred(lambda: smooth_trees(budget - 2))
        options.append(inner.map(lambda u: Bin("^", Call("cos", u), Num(2.0))))
    return st.one_of(*options)


def depth(e) -> int:
    if isinstance(e, (Num, Sym)):
        return 0
    if isinstance(e, (Neg, Call)):
        return 1 + depth(e.arg)
    return 1 + max(depth(e.left), depth(e.right))
