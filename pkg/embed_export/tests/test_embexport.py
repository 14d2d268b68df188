import os

import cv2
import numpy as np
import pytest

from embexport.cli import main
from embexport.emb1 import read_embeddings, write_embeddings
from embexport.encoders import ColorSemanticsEncoder, PretrainedEncoder, make_encoder
from embexport.errors import EncoderUnavailable, InvalidManifest, IoError
from embexport.export import export_images, export_text
from embexport.manifest import ExportManifest, load_manifest

PALETTE = {
    "red": (200, 40, 40),
    "green": (40, 180, 50),
    "blue": (40, 60, 200),
    "yellow": (215, 205, 40),
    "cyan": (40, 190, 190),
    "magenta": (200, 40, 190),
    "orange": (230, 140, 25),
    "purple": (130, 50, 155),
    "white": (240, 240, 240),
    "black": (20, 20, 20),
}


def write_color_images(tmp_path):
    """One mostly-uniform image per palette color; returns {name: path}."""
    rng = np.random.default_rng(0)
    paths = {}
    for name, rgb in PALETTE.items():
        img = np.tile(np.array(rgb, dtype=np.float64), (48, 48, 1))
        img += rng.normal(0, 6.0, img.shape)  # mild texture
        img = np.clip(img, 0, 255).astype(np.uint8)
        path = str(tmp_path / f"{name}.png")
        cv2.imwrite(path, cv2.cvtColor(img, cv2.COLOR_RGB2BGR))
        paths[name] = path
    return paths


def test_emb1_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    records = [(i, rng.normal(size=12).astype(np.float32)) for i in range(5)]
    path = tmp_path / "x.emb"
    write_embeddings(path, records)
    back = read_embeddings(path)
    assert [i for i, _ in back] == [0, 1, 2, 3, 4]
    for (_, a), (_, b) in zip(records, back):
        np.testing.assert_array_equal(a.astype(np.float64), b)
    with pytest.raises(IoError):
        read_embeddings(tmp_path / "missing.emb")


def test_fallback_encoder_is_deterministic_and_unit_norm():
    enc = ColorSemanticsEncoder()
    rng = np.random.default_rng(2)
    img = rng.uniform(size=(32, 32, 3))
    a, b = enc.encode_image(img), enc.encode_image(img)
    np.testing.assert_array_equal(a, b)
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-5)
    t = enc.encode_text("a red door near a blue wall")
    assert np.linalg.norm(t) == pytest.approx(1.0, abs=1e-5)
    assert t.shape == a.shape


def test_fallback_text_recognizes_synonyms_and_unknowns():
    enc = ColorSemanticsEncoder()
    assert np.array_equal(enc.encode_text("grey"), enc.encode_text("gray"))
    assert np.array_equal(enc.encode_text("violet"), enc.encode_text("purple"))
    neutral = enc.encode_text("completely unrelated prompt")
    np.testing.assert_allclose(neutral, np.full(enc.dim, 1.0 / np.sqrt(enc.dim)))


def test_fallback_cross_modal_ranking(tmp_path):
    # every color prompt must rank the image of that color first
    enc = ColorSemanticsEncoder()
    paths = write_color_images(tmp_path)
    vecs = {}
    for name, path in paths.items():
        bgr = cv2.imread(path)
        vecs[name] = enc.encode_image(cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB))
    for name in PALETTE:
        q = enc.encode_text(f"a {name} wall")
        ranked = sorted(vecs, key=lambda n: -float(q @ vecs[n]))
        assert ranked[0] == name, f"prompt {name!r} ranked {ranked[:3]}"


def test_manifest_load_and_validation(tmp_path):
    paths = write_color_images(tmp_path)
    man = tmp_path / "manifest.yaml"
    man.write_text(
        "images:\n"
        f"  - {{index: 0, path: red.png}}\n"
        f"  - {{index: 4, path: {paths['blue']}}}\n"
        "prompts:\n  - a red wall\n"
        "output: out.emb\n"
    )
    m = load_manifest(str(man))
    assert m.images[0] == (0, str(tmp_path / "red.png"))  # relative to manifest
    assert m.images[1] == (4, paths["blue"])
    assert m.prompts == ["a red wall"]
    assert m.output == "out.emb"

    with pytest.raises(InvalidManifest):
        ExportManifest(images=[(0, paths["red"]), (0, paths["blue"])]).validate()
    with pytest.raises(InvalidManifest):
        ExportManifest(images=[(1, str(tmp_path / "nope.png"))]).validate()
    bad = tmp_path / "bad.yaml"
    bad.write_text("- a\n- list\n")
    with pytest.raises(InvalidManifest):
        load_manifest(str(bad))


def test_export_images_round_trip_and_determinism(tmp_path):
    paths = write_color_images(tmp_path)
    manifest = ExportManifest(images=[(i, p) for i, p in enumerate(paths.values())])
    enc = ColorSemanticsEncoder()
    out1, out2 = tmp_path / "a.emb", tmp_path / "b.emb"
    assert export_images(manifest, enc, str(out1)) == len(paths)
    export_images(manifest, enc, str(out2))
    assert out1.read_bytes() == out2.read_bytes()
    back = read_embeddings(out1)
    assert [i for i, _ in back] == list(range(len(paths)))
    for _, v in back:
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-5)


def test_export_text_empty_prompts(tmp_path):
    out = tmp_path / "t.emb"
    assert export_text([], ColorSemanticsEncoder(), str(out)) == 0
    assert read_embeddings(out) == []


def test_cli_export_images_and_text(tmp_path, capsys):
    paths = write_color_images(tmp_path)
    man = tmp_path / "m.yaml"
    man.write_text(
        "images:\n"
        + "".join(f"  - {{index: {i}, path: {p}}}\n" for i, p in enumerate(paths.values()))
    )
    out = tmp_path / "img.emb"
    rc = main(["--encoder", "fallback", "export-images",
               "--manifest", str(man), "--out", str(out)])
    assert rc == 0
    assert f"wrote {len(paths)}" in capsys.readouterr().out
    assert len(read_embeddings(out)) == len(paths)

    prompts = tmp_path / "prompts.txt"
    prompts.write_text("a red wall\na blue wall\n")
    tout = tmp_path / "txt.emb"
    assert main(["--encoder", "fallback", "export-text",
                 "--prompts", str(prompts), "--out", str(tout)]) == 0
    assert len(read_embeddings(tout)) == 2


def test_cli_missing_output_is_an_error(tmp_path, capsys):
    man = tmp_path / "m.yaml"
    man.write_text("images: []\n")
    assert main(["--encoder", "fallback", "export-images", "--manifest", str(man)]) == 1
    assert "error:" in capsys.readouterr().err


def test_pretrained_encoder_unavailable_offline():
    # this environment has no pretrained weights; constructing the backend
    # must fail with the dedicated error rather than crash later
    with pytest.raises(EncoderUnavailable):
        PretrainedEncoder()
    with pytest.raises(ValueError):
        make_encoder("nope")
