import string
from pathlib import Path

import numpy as np
import pytest

from wordrank.core import finite_difference_check
from wordrank.encoders import Alphabet, StringEncoder, VisualEncoder, pad_sequences, synth_render
from wordrank.model import WordSpotterModel

LETTERS = Alphabet(string.ascii_lowercase)
GOLDEN = Path(__file__).parent / "data" / "render_wordspot_1234.npy"


@pytest.fixture(scope="module")
def small():
    enc_s = StringEncoder(LETTERS, char_dim=6, hidden=5, out_dim=8)
    enc_v = VisualEncoder(len(LETTERS), proj=9, hidden=7, out_dim=8, window=3, depth=2)
    rng = np.random.default_rng(0)
    params = enc_s.init_params(rng)
    params.update(enc_v.init_params(rng))
    return enc_s, enc_v, params


class TestAlphabet:
    def test_index_and_errors(self):
        a = Alphabet("abc")
        assert list(a.encode("cab")) == [2, 0, 1]
        with pytest.raises(ValueError):
            a.encode("abd")
        with pytest.raises(ValueError):
            Alphabet("aa")

    def test_from_words(self):
        assert str(Alphabet.from_words(["bca", "ad"])) == "abcd"


class TestSynthRender:
    def test_noiseless_is_one_hot(self):
        s = synth_render("abca", 0.0, 5, Alphabet("abc"))
        np.testing.assert_array_equal(s.features, np.eye(3)[[0, 1, 2, 0]])

    def test_seeded(self):
        a = synth_render("word", 0.3, 9, LETTERS)
        b = synth_render("word", 0.3, 9, LETTERS)
        c = synth_render("word", 0.3, 10, LETTERS)
        np.testing.assert_array_equal(a.features, b.features)
        assert not np.array_equal(a.features, c.features)
        assert a.features.shape == (4, 26)

    def test_golden(self):
        s = synth_render("wordspot", 0.3, 1234, LETTERS)
        assert s.features.astype("<f8").tobytes() == np.load(GOLDEN).astype("<f8").tobytes()

    def test_errors(self):
        with pytest.raises(ValueError):
            synth_render("Word", 0.3, 1, LETTERS)
        with pytest.raises(ValueError):
            synth_render("word", -1.0, 1, LETTERS)


def test_pad_sequences():
    X, mask = pad_sequences([np.ones((2, 3)), np.ones((4, 3))])
    assert X.shape == (2, 4, 3)
    np.testing.assert_array_equal(mask, [[1, 1, 0, 0], [1, 1, 1, 1]])
    with pytest.raises(ValueError):
        pad_sequences([np.ones((0, 3))])
    with pytest.raises(ValueError):
        pad_sequences([])


class TestStringEncoder:
    def test_unit_norm_and_deterministic(self, small):
        enc, _, params = small
        words = ["a", "bank", "banks", "zzzzzzzzzzzzzz"]
        e = enc.encode(words, params)
        assert e.shape == (4, 8)
        np.testing.assert_allclose(np.linalg.norm(e, axis=1), 1.0, atol=1e-6)
        np.testing.assert_array_equal(e, enc.encode(words, params))

    def test_padding_does_not_leak(self, small):
        enc, _, params = small
        alone = enc.encode(["ab"], params)[0]
        batched = enc.encode(["ab", "abcdefghij"], params)[0]
        np.testing.assert_allclose(alone, batched, atol=1e-12)

    def test_permutation(self, small):
        enc, _, params = small
        words = ["one", "three", "x", "seven"]
        e = enc.encode(words, params)
        perm = [2, 0, 3, 1]
        np.testing.assert_allclose(enc.encode([words[i] for i in perm], params), e[perm], atol=1e-12)

    def test_errors(self, small):
        enc, _, params = small
        with pytest.raises(ValueError):
            enc.encode([""], params)
        with pytest.raises(ValueError):
            enc.encode(["ab1"], params)

    def test_gradient(self, small):
        enc, _, params = small
        words = ["ab", "bank", "q"]
        w = np.random.default_rng(1).normal(size=(3, 8))
        psi = {k: v for k, v in params.items() if k.startswith("psi.")}
        emb, cache = enc.forward(words, psi)
        err = finite_difference_check(lambda p: float(np.sum(enc.encode(words, p) * w)), psi, enc.backward(w, cache, psi))
        assert err < 1e-4


class TestVisualEncoder:
    def test_unit_norm_and_deterministic(self, small):
        _, enc, params = small
        seqs = [synth_render(w, 0.3, i, LETTERS).features for i, w in enumerate(["a", "bank", "wordspotting"])]
        e = enc.encode(seqs, params)
        np.testing.assert_allclose(np.linalg.norm(e, axis=1), 1.0, atol=1e-6)
        np.testing.assert_array_equal(e, enc.encode(seqs, params))

    def test_permutation_and_padding(self, small):
        _, enc, params = small
        seqs = [synth_render(w, 0.3, i, LETTERS).features for i, w in enumerate(["ab", "bank", "zz", "xyzzy"])]
        e = enc.encode(seqs, params)
        perm = [3, 1, 0, 2]
        np.testing.assert_allclose(enc.encode([seqs[i] for i in perm], params), e[perm], atol=1e-12)
        np.testing.assert_allclose(enc.encode(seqs[:1], params)[0], e[0], atol=1e-12)

    def test_errors(self, small):
        _, enc, params = small
        with pytest.raises(ValueError):
            enc.encode([np.zeros((0, 26))], params)
        with pytest.raises(ValueError):
            enc.encode([np.zeros((3, 5))], params)
        with pytest.raises(ValueError):
            VisualEncoder(4, window=2)

    @pytest.mark.parametrize("depth, window", [(1, 1), (2, 3), (3, 5)])
    def test_gradient(self, depth, window):
        enc = VisualEncoder(5, proj=6, hidden=4, out_dim=3, window=window, depth=depth)
        rng = np.random.default_rng(depth)
        params = enc.init_params(rng)
        seqs = [rng.normal(size=(n, 5)) for n in (2, 5, 3)]
        w = rng.normal(size=(3, 3))
        emb, cache = enc.forward(seqs, params)
        err = finite_difference_check(lambda p: float(np.sum(enc.encode(seqs, p) * w)), params, enc.backward(w, cache, params))
        assert err < 1e-4


def test_model_roundtrip(tmp_path):
    m = WordSpotterModel(Alphabet("abcd"), seed=3, char_dim=4, rnn_hidden=3, proj=5, head_hidden=4)
    m.save(tmp_path / "m.ckpt", {"adam.t": np.array([2.0])}, {"note": "x"})
    back, rest, meta = WordSpotterModel.load(tmp_path / "m.ckpt")
    assert back.alphabet == m.alphabet and back.arch == m.arch
    assert set(rest) == {"adam.t"} and meta["note"] == "x"
    np.testing.assert_array_equal(back.embed_strings(["abc"]), m.embed_strings(["abc"]))
