"""Smoke test for the eics_py extension module."""

import math

import eics_py


def chain():
    return eics_py.Circuit(
        nodes=[("u", 2), ("v", 2), ("w", 2)],
        edges=[("u", "v", [[1.0, 0.0], [0.0, 2.0]]), ("v", "w", [[0.5, 0.0], [0.0, 1.0]])],
        inputs=["u"],
        outputs=["w"],
    )


def main():
    c = chain()
    assert c.validate() == []
    assert c.topological_order() == ["u", "v", "w"]
    assert c.macro_jacobian(["u"], ["w"]) == [[0.5, 0.0], [0.0, 2.0]]

    back = eics_py.Circuit.from_json(c.to_json())
    assert back.to_json() == c.to_json()

    consistent = {"u": [1.0, 1.0], "v": [1.0, 2.0], "w": [0.5, 2.0]}
    rep = eics_py.sheaf_inconsistency(c, consistent)
    assert rep["c_sh"] == 0.0, rep

    noisy = {"u": [1.0, 1.0], "v": [0.0, 0.0], "w": [3.0, -1.0]}
    assert eics_py.sheaf_inconsistency(c, noisy)["c_sh"] > 0.0

    ei = eics_py.ei_gaussian([[2.0, 0.0], [0.0, 1.0]], alpha=1.0)
    assert abs(ei["nats"] - 0.5 * (math.log(5.0) + math.log(2.0))) < 1e-12, ei

    s = eics_py.eics_score(c, consistent)
    assert abs(s["score"] - s["emergence"]) < 1e-12, s

    l2 = eics_py.lambda2(c, weighting="unit")
    assert l2["connected"] and l2["lambda2"] > 0.0, l2

    t = eics_py.threshold_select([0.1, 0.4, 0.35, 0.8], [False, False, True, True])
    assert abs(t["auroc"] - 0.75) < 1e-12, t

    rows = eics_py.toy_sweep(taus=[0.0, 1.0], n_seeds=3, dim=8)
    assert len(rows) == 2 and rows[0]["n_seeds"] == 3

    toy = eics_py.toy_circuit(seed=1000, dim=4)
    assert toy.validate() == [] and toy.state_dim == 24
    assert "score" in eics_py.eics_score(toy, {n: [0.0] * 4 for n in toy.node_ids}, partition="embedded")

    try:
        eics_py.Circuit.from_json("{}")
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")

    print("smoke test ok")


if __name__ == "__main__":
    main()
