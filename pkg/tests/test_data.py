import hashlib

import numpy as np
import pytest

from fasvit.data import (
    AttackType,
    Label,
    MultimodalSample,
    generate_dataset,
    generate_splits,
    labels_of,
    prepare_inputs,
    read_dataset,
    read_split,
    write_dataset,
)


def depth_var(s):
    return float(np.var(s.depth))


def test_counts_and_labels():
    data = generate_dataset(0, 6, 16)
    assert len(data) == 12
    assert labels_of(data).tolist() == [1] * 6 + [0] * 6
    kinds = [s.attack_type for s in data[6:]]
    assert kinds == [AttackType.PRINT, AttackType.REPLAY, AttackType.FLAT_MASK] * 2
    assert len({s.id for s in data}) == 12


def test_bona_fide_depth_has_more_relief_than_print():
    data = generate_dataset(4, 60, 32)
    bona = [depth_var(s) for s in data if s.label is Label.BONA_FIDE]
    prints = [depth_var(s) for s in data if s.attack_type is AttackType.PRINT]
    assert min(bona) > max(prints)


def test_same_seed_is_bitwise_identical():
    a, b = generate_dataset(9, 5, 24), generate_dataset(9, 5, 24)
    for x, y in zip(a, b):
        assert x.id == y.id
        assert all(np.array_equal(getattr(x, m), getattr(y, m)) for m in ("rgb", "ir", "depth"))
    c = generate_dataset(10, 5, 24)
    assert not np.array_equal(a[0].depth, c[0].depth)


def test_images_are_8bit_in_unit_range():
    for s in generate_dataset(1, 4, 16):
        for img in (s.rgb, s.ir, s.depth):
            assert img.min() >= 0 and img.max() <= 1
            assert np.array_equal(np.rint(img * 255) / 255, img)


def test_depth_variance_classifier_is_nearly_perfect():
    # fit the cut on one draw, score it on a fresh 200-sample draw
    fit = generate_dataset(21, 100, 64)
    evalset = generate_dataset(22, 100, 64)
    v = np.array([depth_var(s) for s in fit])
    y = labels_of(fit)
    cuts = np.unique(v)
    acc = [np.mean((v >= c) == y) for c in cuts]
    cut = cuts[int(np.argmax(acc))]
    pred = np.array([depth_var(s) for s in evalset]) >= cut
    assert len(evalset) == 200
    assert np.mean(pred == labels_of(evalset)) >= 0.99


def test_splits_use_disjoint_streams():
    sp = generate_splits(0, 3, 3, 3, image_size=16)
    assert not np.array_equal(sp.train[0].depth, sp.dev[0].depth)
    assert sp["test"][0].id.startswith("te2_")
    with pytest.raises(KeyError):
        sp["val"]


def test_sample_invariants():
    img = np.zeros((8, 8))
    with pytest.raises(ValueError):
        MultimodalSample("x", np.zeros((3, 8, 8)), img, img, Label.BONA_FIDE, AttackType.PRINT)
    with pytest.raises(ValueError):
        MultimodalSample("x", np.zeros((3, 8, 8)), np.zeros((4, 4)), img, Label.ATTACK, AttackType.PRINT)
    with pytest.raises(ValueError):
        generate_dataset(0, 0)


def test_prepare_inputs_shapes(tiny_splits):
    xs = prepare_inputs(tiny_splits.dev[:4])
    assert [x.shape for x in xs] == [(4, 3, 32, 32), (4, 3, 32, 32), (4, 1, 32, 32)]
    assert all(x.dtype == np.float32 for x in xs)


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_dataset_directory_round_trip(tmp_path):
    sp = generate_splits(3, 2, 2, 2, image_size=16)
    write_dataset(tmp_path / "a", sp)
    write_dataset(tmp_path / "b", generate_splits(3, 2, 2, 2, image_size=16))
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    back = read_dataset(tmp_path / "a")
    for orig, got in zip(sp.train, back.train):
        assert orig.id == got.id and orig.label == got.label and orig.attack_type == got.attack_type
        assert np.array_equal(orig.rgb, got.rgb) and np.array_equal(orig.depth, got.depth)
    header = (tmp_path / "a" / "dev" / "manifest.csv").read_text().splitlines()[0]
    assert header == "id,rgb_path,ir_path,depth_path,label,attack_type"


def test_manifest_missing_column_rejected(tmp_path):
    write_dataset(tmp_path, generate_splits(0, 1, 1, 1, image_size=8))
    man = tmp_path / "train" / "manifest.csv"
    lines = man.read_text().splitlines()
    parts = lines[1].split(",")
    parts[2] = ""
    man.write_text("\n".join([lines[0], ",".join(parts)] + lines[2:]) + "\n")
    with pytest.raises(ValueError):
        read_split(tmp_path, "train")
