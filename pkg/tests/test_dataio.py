import json
import warnings

import numpy as np
import pytest
from scipy.io import wavfile

from wavefront.dataio import (AudioClip, SynthSpec, interference, load_manifest, make_synthetic_corpus,
                              random_crop, read_wav, synthesize, write_corpus)


def quiet_corpus(**kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return make_synthetic_corpus(SynthSpec(**kwargs))


class TestReadWav:
    def test_pcm16_zeros(self, tmp_path):
        path = tmp_path / "z.wav"
        wavfile.write(path, 16000, np.zeros(16000, dtype=np.int16))
        clip = read_wav(path)
        assert clip.samples.shape == (16000,) and not clip.samples.any()
        assert clip.sample_rate == 16000

    def test_pcm16_full_scale(self, tmp_path):
        path = tmp_path / "fs.wav"
        wavfile.write(path, 16000, np.array([32767, -32767, 0], dtype=np.int16))
        np.testing.assert_allclose(read_wav(path).samples, [32767 / 32768, -32767 / 32768, 0.0])

    def test_float32_stereo_averaged(self, tmp_path):
        path = tmp_path / "st.wav"
        data = np.array([[0.5, -0.25], [1.0, 0.0]], dtype=np.float32)
        wavfile.write(path, 16000, data)
        np.testing.assert_allclose(read_wav(path).samples, [0.125, 0.5])

    def test_wrong_rate(self, tmp_path):
        path = tmp_path / "cd.wav"
        wavfile.write(path, 44100, np.zeros(100, dtype=np.int16))
        with pytest.raises(ValueError, match="44100"):
            read_wav(path)

    def test_unsupported_codec(self, tmp_path):
        path = tmp_path / "u8.wav"
        wavfile.write(path, 16000, np.zeros(10, dtype=np.uint8))
        with pytest.raises(ValueError):
            read_wav(path)

    def test_not_a_wav(self, tmp_path):
        path = tmp_path / "junk.wav"
        path.write_bytes(b"not audio at all")
        with pytest.raises(ValueError):
            read_wav(path)


class TestRandomCrop:
    def test_full_length_unchanged(self):
        x = np.arange(100.0)
        np.testing.assert_array_equal(random_crop(x, 100, np.random.default_rng(0)), x)

    def test_segment_length(self):
        clip = AudioClip(np.zeros(32000), label=2)
        out = random_crop(clip, 15360, np.random.default_rng(0))
        assert len(out) == 15360 and out.label == 2

    def test_short_clip_padded(self):
        out = random_crop(np.ones(5), 8, np.random.default_rng(0))
        np.testing.assert_array_equal(out, [1, 1, 1, 1, 1, 0, 0, 0])

    def test_contiguous_and_uniform(self):
        x = np.arange(10.0)
        rng = np.random.default_rng(1)
        starts = []
        for _ in range(4000):
            seg = random_crop(x, 4, rng)
            np.testing.assert_array_equal(np.diff(seg), 1.0)
            starts.append(seg[0])
        counts = np.bincount(np.array(starts, dtype=int), minlength=7)
        assert counts.size == 7
        assert np.all(np.abs(counts / 4000 - 1 / 7) < 0.03)


class TestSynthesis:
    def test_tone_peak(self):
        x = synthesize("pure-tone", 16000, (200.0, 4000.0), np.random.default_rng(0), freq=1000.0)
        spectrum = np.abs(np.fft.rfft(x))
        assert abs(np.argmax(spectrum) * 16000 / len(x) - 1000.0) <= 2.0

    @pytest.mark.parametrize("kind", ["pure-tone", "chirp", "am-tone", "noise", "harmonic"])
    def test_energy_inside_band(self, kind):
        band = (1000.0, 2000.0)
        x = synthesize(kind, 16000, band, np.random.default_rng(1))
        power = np.abs(np.fft.rfft(x)) ** 2
        freqs = np.fft.rfftfreq(16000, 1 / 16000)
        if kind == "harmonic":
            # fundamental inside the band, overtones above it
            assert freqs[np.argmax(power)] >= band[0] - 20
        else:
            inside = power[(freqs >= band[0] - 50) & (freqs <= band[1] + 50)].sum()
            assert inside / power.sum() > 0.9

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            SynthSpec(classes=("pure-tone", "whistle"))


class TestInterference:
    def test_unit_rms(self):
        x = interference(16000, 1600, np.random.default_rng(0))
        assert np.sqrt(np.mean(x ** 2)) == pytest.approx(1.0)

    def test_one_tone_per_hop(self):
        hop = 1600
        x = interference(8 * hop, hop, np.random.default_rng(1))
        peaks = []
        for b in range(8):
            block = x[b * hop:(b + 1) * hop]
            power = np.abs(np.fft.rfft(block, 16000)) ** 2
            peak = int(np.argmax(power))
            # nearly all energy sits around a single frequency
            assert power[max(peak - 40, 0):peak + 41].sum() / power.sum() > 0.95
            peaks.append(peak)
        assert len(set(peaks)) == 8

    def test_no_clicks_at_switches(self):
        hop = 800
        x = interference(4 * hop, hop, np.random.default_rng(2))
        np.testing.assert_allclose(x[[hop - 1, hop, 2 * hop - 1, 2 * hop]], 0.0, atol=0.05)

    def test_disabled_matches_clean_stream(self):
        a = quiet_corpus(clips_per_class=2, clip_seconds=0.2, interference_db=None, snr_db=200.0)
        b = quiet_corpus(clips_per_class=2, clip_seconds=0.2, interference_db=-200.0, snr_db=200.0)
        np.testing.assert_allclose(a.waveforms(), b.waveforms(), atol=1e-9)

    def test_level(self):
        loud = quiet_corpus(classes=("pure-tone", "noise"), clips_per_class=3, clip_seconds=0.5, snr_db=200.0,
                            interference_db=0.0)
        clean = quiet_corpus(classes=("pure-tone", "noise"), clips_per_class=3, clip_seconds=0.5, snr_db=200.0,
                             interference_db=None)
        # equal-power interference: the clean part keeps about half the energy
        for mix, ref in zip(loud.clips, clean.clips):
            share = np.dot(mix.samples, ref.samples) ** 2 / (np.dot(ref.samples, ref.samples) * np.dot(mix.samples, mix.samples))
            assert 0.3 < share < 0.7

    def test_bad_hop(self):
        with pytest.raises(ValueError):
            SynthSpec(interference_hop=0.0)


class TestCorpus:
    def test_count_and_balance(self):
        c = quiet_corpus(clips_per_class=200, clip_seconds=0.1)
        assert len(c) == 800
        np.testing.assert_array_equal(np.bincount(c.labels), [200] * 4)

    def test_byte_identical(self):
        a = quiet_corpus(clips_per_class=5, clip_seconds=0.2, seed=3)
        b = quiet_corpus(clips_per_class=5, clip_seconds=0.2, seed=3)
        assert a.waveforms().tobytes() == b.waveforms().tobytes()
        np.testing.assert_array_equal(a.splits, b.splits)

    def test_peak_and_rms(self):
        c = quiet_corpus(clips_per_class=20, clip_seconds=0.5, snr_db=0.0, rms=0.2)
        for clip in c.clips:
            assert np.max(np.abs(clip.samples)) <= 1.0
            rms = np.sqrt(np.mean(clip.samples ** 2))
            assert abs(rms - 0.2) <= 0.2 * 0.2

    def test_splits(self):
        c = quiet_corpus(clips_per_class=50, clip_seconds=0.1, seed=9)
        for label in range(4):
            counts = {s: int(np.sum((c.labels == label) & (c.splits == s))) for s in ("train", "valid", "test")}
            assert counts == {"train": 40, "valid": 5, "test": 5}
        assert set(c.splits) == {"train", "valid", "test"}
        again = quiet_corpus(clips_per_class=50, clip_seconds=0.1, seed=9)
        np.testing.assert_array_equal(c.splits, again.splits)

    def test_default_bands_disjoint(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            c = make_synthetic_corpus(SynthSpec(clips_per_class=1, clip_seconds=0.1))
        assert c.class_names == ("pure-tone", "chirp", "am-tone", "noise")

    def test_spec_dict_round_trip(self):
        spec = SynthSpec(clips_per_class=7, interference_db=None, bands={"noise": (100.0, 900.0)})
        assert SynthSpec.from_dict(spec.to_dict()) == spec

    def test_overlap_warned(self):
        bands = {"pure-tone": (100.0, 900.0), "noise": (800.0, 2000.0)}
        with pytest.warns(UserWarning, match="overlap"):
            make_synthetic_corpus(SynthSpec(classes=("pure-tone", "noise"), bands=bands, clips_per_class=2,
                                            clip_seconds=0.1))

    def test_disjoint_bands_silent(self):
        bands = {"pure-tone": (100.0, 700.0), "noise": (800.0, 2000.0)}
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            make_synthetic_corpus(SynthSpec(classes=("pure-tone", "noise"), bands=bands, clips_per_class=2,
                                            clip_seconds=0.1))

    @pytest.mark.parametrize("bad", [dict(classes=("noise",)), dict(bands={"noise": (0.0, 100.0)}),
                                     dict(bands={"noise": (100.0, 9000.0)})])
    def test_invalid_spec(self, bad):
        with pytest.raises(ValueError):
            SynthSpec(**bad)


class TestManifest:
    def test_round_trip(self, tmp_path):
        c = quiet_corpus(clips_per_class=3, clip_seconds=0.1)
        manifest = write_corpus(c, tmp_path)
        lines = [json.loads(l) for l in open(manifest)]
        assert len(lines) == 12 and set(lines[0]) == {"path", "label", "split"}
        back = load_manifest(manifest)
        assert back.class_names == c.class_names
        np.testing.assert_array_equal(back.labels, c.labels)
        np.testing.assert_array_equal(back.splits, c.splits)
        np.testing.assert_allclose(back.waveforms(), c.waveforms(), atol=1e-7)

    def test_missing_field(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(json.dumps({"path": "a.wav", "label": "x"}) + "\n")
        with pytest.raises(ValueError, match="split"):
            load_manifest(path)
