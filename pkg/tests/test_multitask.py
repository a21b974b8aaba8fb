import numpy as np
import pytest

from conftest import central_difference, relative_error, tiny_net, tiny_toy
from hydalearn.data import toy_splits
from hydalearn.errors import ContractError, ShapeError
from hydalearn.multitask import Batch, MultiTaskNet, read_checkpoint, write_checkpoint
from hydalearn.nn import Loss, Mlp
from hydalearn.tensor_core import Rng


def _batch(splits, n=12):
    return splits.train.batch(np.arange(n))


@pytest.mark.parametrize("task", ["main", "aux"])
def test_task_gradients_match_finite_differences(splits, net, task):
    batch = _batch(splits)
    _, bundle = net.task_gradients(batch, task)
    group = "m" if task == "main" else "a"
    for name, analytic in (("s", bundle.grad_s), (group, bundle.head)):
        mlp = net.group(name)

        def f(theta, mlp=mlp):
            saved = mlp.params.copy()
            mlp.set_params(theta)
            v = net.task_loss(batch.inputs, batch.targets(task), task)
            mlp.set_params(saved)
            return v

        numeric = central_difference(f, mlp.params)
        assert relative_error(analytic, numeric).max() < 1e-4


def test_bce_head_gradient_matches_finite_differences():
    splits = toy_splits(tiny_toy())
    y = (splits.train.targets_aux > 0).astype(float)
    net = tiny_net(splits, loss_aux="bce")
    batch = Batch(splits.train.inputs[:10], splits.train.targets_main[:10], y[:10])
    _, bundle = net.task_gradients(batch, "aux")

    def f(theta):
        saved = net.encoder.params.copy()
        net.encoder.set_params(theta)
        v = net.task_loss(batch.inputs, batch.targets_aux, "aux")
        net.encoder.set_params(saved)
        return v

    assert relative_error(bundle.grad_s, central_difference(f, net.encoder.params)).max() < 1e-4


def test_bundle_only_carries_own_head(splits, net):
    _, g = net.task_gradients(_batch(splits), "main")
    assert g.grad_a is None and g.grad_m.shape == (net.head_main.n_params,)
    assert g.grad_s.shape == (net.encoder.n_params,)
    assert net.counters["backward"] == 1


def test_apply_update_touches_one_group(splits, net):
    before = {g: net.group(g).params.copy() for g in "sma"}
    net.apply_update("m", np.ones(net.head_main.n_params), 0.5)
    assert np.array_equal(net.encoder.params, before["s"])
    assert np.array_equal(net.head_aux.params, before["a"])
    np.testing.assert_array_equal(net.head_main.params, before["m"] - 0.5)
    with pytest.raises(ContractError):
        net.group("x")


def test_snapshot_restore_is_exact(splits, net):
    snap = net.snapshot()
    ref = net.checksum()
    for g in "sma":
        net.apply_update(g, np.full(net.group(g).n_params, 0.3), 0.1)
    assert net.checksum() != ref
    net.restore(snap)
    assert net.checksum() == ref
    # the snapshot owns its memory
    net.apply_update("s", np.ones(net.encoder.n_params), 1.0)
    net.restore(snap)
    assert net.checksum() == ref


def test_build_is_deterministic(splits):
    assert tiny_net(splits, seed=3).checksum() == tiny_net(splits, seed=3).checksum()
    assert tiny_net(splits, seed=3).checksum() != tiny_net(splits, seed=4).checksum()


def test_architecture_checks():
    enc = Mlp([4, 6], ["tanh"])
    with pytest.raises(ShapeError):
        MultiTaskNet(enc, Mlp([5, 2], ["identity"]), Mlp([6, 2], ["identity"]))
    with pytest.raises(ShapeError):
        MultiTaskNet(enc, Mlp([6, 2], ["identity"]), Mlp([6, 2], ["identity"]), Loss("mse"), Loss("bce"))


def test_checkpoint_round_trip(tmp_path, splits, net):
    net.apply_update("s", Rng(1).standard_normal(net.encoder.n_params), 0.01)
    path = tmp_path / "ckpt.bin"
    write_checkpoint(net, path)
    back = read_checkpoint(path)
    assert back.checksum() == net.checksum()
    assert back.architecture() == net.architecture()
    x = splits.val.inputs
    assert np.array_equal(back.predict(x, "main"), net.predict(x, "main"))
    assert np.array_equal(back.predict(x, "aux"), net.predict(x, "aux"))


def test_checkpoint_rejects_bad_files(tmp_path, net):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTACKPT" + b"\0" * 16)
    with pytest.raises(ContractError):
        read_checkpoint(bad)
    good = tmp_path / "good.bin"
    write_checkpoint(net, good)
    truncated = tmp_path / "short.bin"
    truncated.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(ContractError):
        read_checkpoint(truncated)
