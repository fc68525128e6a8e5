import numpy as np
import pytest

from conftest import two_source_spec
from qaoi import policy_io
from qaoi.occupancy import solve_joint
from qaoi.weakly_coupled import solve_decomposed


def test_joint_roundtrip_is_exact(tmp_path):
    spec = two_source_spec(N=2)
    _, _, pol = solve_joint(spec)
    path = tmp_path / "p.txt"
    policy_io.save(pol, path)
    back = policy_io.load(path, spec)
    np.testing.assert_array_equal(back.f, pol.f)
    assert back.spec == spec


def test_truncated_roundtrip(tmp_path):
    spec = two_source_spec(N=3)
    _, tp, _ = solve_decomposed(spec)
    back = policy_io.loads(policy_io.dumps(tp))
    for a, b in zip(tp.per_source, back.per_source):
        np.testing.assert_array_equal(a.f, b.f)
        assert a.actions == b.actions


def test_spec_mismatch_rejected():
    spec = two_source_spec(N=2)
    text = policy_io.dumps(solve_joint(spec)[2])
    with pytest.raises(policy_io.PolicyFormatError):
        policy_io.loads(text, spec.with_(p=0.5))
    with pytest.raises(policy_io.PolicyFormatError):
        policy_io.loads("not a policy\n")
    tampered = text.replace('"p": 0.9', '"p": 0.8')
    with pytest.raises(policy_io.PolicyFormatError):
        policy_io.loads(tampered)
