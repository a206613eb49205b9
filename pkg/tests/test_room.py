import json

import numpy as np
import pytest

from avsep.room.dataset import (PoolTooSmallError, SamplerConfig, load_manifest, render_dataset, sample_dataset,
                                sample_splits, speakers_of)
from avsep.room.geometry import (ArrayGeometry, angle_bin, doa_from_pixel, doa_from_position,
                                 min_interferer_angle)
from avsep.room.rir import (DRR_CAP_DB, RoomGeometryError, RoomSpec, compute_drr, generate_rir, generate_rirs,
                            measure_t60)
from avsep.room.scene import (MixtureBundle, SceneSpec, SilentSignalError, SourcePlacement, ratio_db,
                              render_scene, scale_to_snr, scale_to_tir)
from avsep.room.sources import SourcePool

FS = 16000
C = 343.0


# ---------------------------------------------------------------- gains


def test_scale_to_snr_examples():
    x = np.ones(100)
    assert scale_to_snr(x, x, 0.0) == pytest.approx(1.0)
    assert scale_to_snr(x, x, 20.0) == pytest.approx(0.1)
    g = scale_to_snr(2 * x, x, 6.0)
    assert 10 * np.log10(4 / g**2) == pytest.approx(6.0, abs=1e-12)
    assert g == pytest.approx(1.0024, abs=1e-4)
    with pytest.raises(SilentSignalError):
        scale_to_snr(np.zeros(5), x[:5], 0.0)


def test_scale_to_tir_is_joint():
    rng = np.random.default_rng(0)
    t, a, b = rng.normal(size=(3, 1000))
    g = scale_to_tir(t, [a, b], -3.0)
    assert ratio_db(t, g * (a + b)) == pytest.approx(-3.0, abs=1e-9)


# ---------------------------------------------------------------- DRR


def test_drr_examples():
    h = np.zeros(1000)
    h[100] = 1.0
    assert compute_drr(h, 108) == DRR_CAP_DB
    h[300] = 0.5
    assert compute_drr(h, 108) == pytest.approx(10 * np.log10(4), abs=1e-12)
    h[300] = 1.0
    assert compute_drr(h, 108) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        compute_drr(np.zeros(10), 3)


def test_drr_never_decreases_when_tail_is_truncated():
    r = generate_rir(RoomSpec((6, 5, 4), 0.5), (2, 2, 1.5), (4, 3, 1.5))
    values = [compute_drr(r.taps[:n], r.direct_index) for n in (len(r.taps), 6000, 3000, 1000, 400)]
    assert all(b >= a for a, b in zip(values, values[1:]))


# ---------------------------------------------------------------- RIR


def test_anechoic_room_is_a_single_pulse():
    r = generate_rir(RoomSpec((6, 5, 4), 0.3, reflection=0.0), (2, 2, 1.5), (4, 3, 1.5))
    assert np.allclose(r.taps, r.direct)
    assert compute_drr(r) == DRR_CAP_DB
    assert r.arrival == pytest.approx(np.sqrt(5) / C * FS)


def test_first_reflection_matches_closed_form():
    room = RoomSpec((6, 5, 4), 0.4)
    src, mic = np.array([2.0, 2.0, 1.5]), np.array([4.0, 3.0, 1.5])
    r = generate_rir(room, src, mic)
    images = []
    for axis in range(3):
        for wall in (0.0, room.dimensions[axis]):
            img = src.copy()
            img[axis] = 2 * wall - src[axis]
            images.append(np.linalg.norm(img - mic))
    first = min(images) / C * FS
    # onset: the first sample after the direct pulse where the reflected part rises to half its early peak
    refl = r.taps - r.direct
    early = refl[: int(first) + 40]
    onset = int(np.argmax(np.abs(early) >= 0.5 * np.abs(early).max()))
    assert abs(onset - first) <= 1


def direct_onset(taps, distance):
    """First tap reaching half the free-field direct amplitude 1/(4 pi d).

    Coincident images near a corner can out-sum the direct pulse, so a threshold
    relative to max|h| is not safe.
    """
    return int(np.argmax(np.abs(taps) >= 0.5 / (4 * np.pi * distance)))


def test_direct_delay_over_random_placements():
    rng = np.random.default_rng(0)
    for _ in range(200):
        dims = rng.uniform([4, 4, 3], [9, 9, 5])
        room = RoomSpec(tuple(dims), rng.uniform(0.3, 0.7))
        src, mic = rng.uniform(0.3, dims - 0.3, (2, 3))
        d = np.linalg.norm(src - mic)
        assert abs(direct_onset(generate_rir(room, src, mic).taps, d) - round(d / C * FS)) <= 1


@pytest.mark.parametrize("t60", [0.3, 0.5, 0.7])
def test_schroeder_t60(t60):
    r = generate_rir(RoomSpec((7, 6, 3.5), t60), (2, 2, 1.5), (5, 4, 1.4))
    assert len(r.taps) >= t60 * FS
    assert measure_t60(r) == pytest.approx(t60, rel=0.2)


def test_room_errors():
    with pytest.raises(RoomGeometryError):
        generate_rir(RoomSpec((6, 5, 4), 0.4), (7, 2, 1), (3, 3, 1))
    with pytest.raises(RoomGeometryError):
        RoomSpec((10, 10, 6), 0.1).reflection_coefficient()  # below the Sabine floor
    with pytest.raises(RoomGeometryError):
        RoomSpec((6, 5, 4), 0.04).reflection_coefficient()


def test_multi_mic_rirs_match_single():
    room = RoomSpec((6, 5, 4), 0.4)
    mics = ArrayGeometry(center=(3, 2.5, 1.5)).mic_positions
    multi = generate_rirs(room, (1.5, 4, 1.7), mics)
    single = generate_rir(room, (1.5, 4, 1.7), mics[3])
    # lengths differ slightly; images near the truncation edge differ, everything before agrees
    n = min(len(single.taps), len(multi[3].taps)) - 100
    assert np.allclose(multi[3].taps[:n], single.taps[:n], atol=1e-12)


# ---------------------------------------------------------------- geometry


def test_doa_examples():
    arr = ArrayGeometry(center=(0, 0, 0), axis=(1, 0, 0))
    assert doa_from_position((0, 2, 0), arr) == pytest.approx(np.pi / 2)
    assert doa_from_position((3, 0, 0), arr) == pytest.approx(0.0, abs=1e-12)
    assert doa_from_position((1, 1, 0.5), arr) == pytest.approx(np.pi / 4, abs=1e-9)
    with pytest.raises(ValueError):
        doa_from_position((0, 0, 0), arr)


def test_doa_from_pixel_is_linear():
    assert doa_from_pixel(0, 640) == 0.0
    assert doa_from_pixel(320, 640) == pytest.approx(np.pi / 2)
    assert doa_from_pixel(160, 640) == pytest.approx(np.pi / 4)
    with pytest.raises(ValueError):
        doa_from_pixel(700, 640)


def test_min_interferer_angle():
    d = np.radians
    assert min_interferer_angle(0.0, [d(30)]) == pytest.approx(d(30))
    assert min_interferer_angle(d(50), [d(60), d(150)]) == pytest.approx(d(10))
    assert min_interferer_angle(d(170), [d(10)]) == pytest.approx(d(160))
    with pytest.raises(ValueError):
        min_interferer_angle(0.0, [])


def test_angle_bins_are_left_closed():
    d = np.radians
    assert angle_bin(d(15)) == "15-45"
    assert angle_bin(d(14.9)) == "0-15"
    assert angle_bin(d(90)) == "90-180"
    assert angle_bin(np.pi) == "90-180"


def test_default_pairs_have_distinct_spacings():
    from avsep.features import MIC_PAIRS

    arr = ArrayGeometry()
    dists = [round(arr.pair_distance(a, b), 9) for a, b in MIC_PAIRS]
    assert sorted(dists) == [0.03, 0.05, 0.08, 0.12, 0.24]


# ---------------------------------------------------------------- scenes


def _scene(seed=0, interferers=1, noise=True, n=16000):
    pool = SourcePool()
    room = RoomSpec((6, 5, 3), 0.4)
    arr = ArrayGeometry(center=(3, 2.5, 1.3))
    inter = [SourcePlacement((1.5 + k, 4.0, 1.6), "interferer", pool.speech_ref(k + 1, seed)) for k in range(interferers)]
    nz = SourcePlacement((5.0, 1.0, 1.0), "noise", pool.noise_ref(0, seed)) if noise else None
    return SceneSpec(room, arr, SourcePlacement((4.5, 3.5, 1.5), "target", pool.speech_ref(0, seed)),
                     inter, nz, 6.0, 0.0, seed, num_samples=n)


def test_render_without_interference_is_the_reverberant_target():
    b = render_scene(_scene(interferers=0), noise_gain=0.0)
    assert np.max(np.abs(b.mixture[0] - b.reverb_target)) < 1e-6


def test_render_realizes_requested_ratios():
    b = render_scene(_scene(interferers=2))
    assert ratio_db(b.reverb_target, b.reverb_noise) == pytest.approx(6.0, abs=1e-6)
    assert ratio_db(b.reverb_target, b.reverb_interference) == pytest.approx(0.0, abs=1e-6)


def test_superposition():
    b = render_scene(_scene())
    assert np.max(np.abs(b.mixture - (b.reverb_target_mc + b.reverb_interference_mc + b.reverb_noise_mc))) < 1e-6


def test_anechoic_target_is_the_direct_path():
    spec = _scene()
    b = render_scene(spec, normalize=False)
    r = generate_rir(spec.room, spec.target.position, spec.array.mic_positions[0])
    expected = np.convolve(b.sources["target"], r.direct)[: spec.num_samples]
    assert np.allclose(b.anechoic_target, expected, atol=1e-9)


def test_silent_target_rejected():
    spec = _scene()
    spec.target = SourcePlacement(spec.target.position, "target", signal=np.zeros(16000))
    with pytest.raises(SilentSignalError):
        render_scene(spec)


def test_bundle_save_load(tmp_path):
    b = render_scene(_scene())
    b.save(tmp_path / "s")
    c = MixtureBundle.load(tmp_path / "s")
    assert c.mixture.shape == b.mixture.shape
    assert np.allclose(c.mixture, b.mixture, atol=1e-6)
    assert c.metadata["snr_db"] == b.metadata["snr_db"]
    assert json.loads((tmp_path / "s" / "meta.json").read_text())["seed"] == 0


def test_scene_spec_json_round_trip():
    spec = _scene()
    again = SceneSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert again.to_dict() == spec.to_dict()
    assert np.array_equal(render_scene(again).mixture, render_scene(spec).mixture)


# ---------------------------------------------------------------- dataset sampling


def test_sampling_is_deterministic():
    a = sample_dataset(10, SourcePool(), seed=5)
    b = sample_dataset(10, SourcePool(), seed=5)
    assert [s.to_dict() for s in a] == [s.to_dict() for s in b]
    assert [s.to_dict() for s in a] != [s.to_dict() for s in sample_dataset(10, SourcePool(), seed=6)]


def test_speaker_count_proportions():
    scenes = sample_dataset(100, SourcePool(), seed=1)
    share = np.mean([s.num_speakers == 2 for s in scenes])
    assert abs(share - 0.5) <= 0.1


def test_splits_are_speaker_disjoint():
    splits = sample_splits({"train": 30, "validation": 5, "test": 10}, SourcePool(), seed=2)
    tr, va, te = (speakers_of(splits[k]) for k in ("train", "validation", "test"))
    assert not tr & te and not tr & va and not va & te
    noise = {k: {s.noise.source["noise"] for s in v} for k, v in splits.items()}
    assert not noise["train"] & noise["test"]


def test_pool_too_small():
    with pytest.raises(PoolTooSmallError):
        sample_splits({"train": 2, "validation": 1, "test": 1}, SourcePool(num_speakers=4), seed=0)


def test_sampled_scenes_are_legal():
    cfg = SamplerConfig()
    for s in sample_dataset(30, SourcePool(), seed=3, config=cfg):
        for p in [s.target, *s.interferers, s.noise]:
            assert s.room.contains(p.position, cfg.wall_margin - 1e-9)
        assert s.room.t60 >= s.room.min_t60()


def test_render_dataset_independent_of_jobs(tmp_path):
    scenes = sample_dataset(4, SourcePool(), seed=4, config=SamplerConfig(duration_s=1.0))
    a = render_dataset(scenes, tmp_path / "a", jobs=1)
    b = render_dataset(scenes, tmp_path / "b", jobs=3)
    assert a["hash"] == b["hash"]
    for e in a["scenes"]:
        assert (tmp_path / "a" / e["path"] / "mixture.wav").read_bytes() == \
            (tmp_path / "b" / e["path"] / "mixture.wav").read_bytes()
    assert load_manifest(tmp_path / "a")["hash"] == a["hash"]


def test_short_utterances_are_never_silent():
    from avsep.room.sources import SpeakerProfile, synth_utterance

    for k in range(300):
        assert np.any(synth_utterance(SpeakerProfile.from_id(k % 24), 4000, k))


@pytest.mark.parametrize("beta, order", [(0.0, 0), (0.7, 6), (0.85, 10)])
def test_matches_reference_image_method(beta, order):
    pra = pytest.importorskip("pyroomacoustics")
    dims, src, mic = (6.0, 5.0, 3.5), (2.0, 1.5, 1.4), (4.2, 3.1, 1.6)
    ours = generate_rir(RoomSpec(dims, 0.4, reflection=beta, max_order=order), src, mic).taps
    ref = pra.ShoeBox(list(dims), fs=FS, materials=pra.Material(1 - beta**2), max_order=order,
                      air_absorption=False, use_rand_ism=False)
    ref.add_source(list(src))
    ref.add_microphone(np.array(mic)[:, None])
    ref.compute_rir()
    # the reference drops the 1/(4 pi) spreading constant and delays by its 40-sample filter half-length
    theirs = np.asarray(ref.rir[0][0])[40:] / (4 * np.pi)
    n = min(len(ours), len(theirs))
    a, b = ours[:n], theirs[:n]
    assert a @ b / np.linalg.norm(a) / np.linalg.norm(b) > 0.97  # residual: our 80 Hz highpass on reflections
    assert np.sum(a**2) / np.sum(b**2) == pytest.approx(1.0, abs=0.03)
