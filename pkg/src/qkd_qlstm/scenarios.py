"""One simulated key exchange per call, under normal operation or one of seven attacks.

All scenarios share a single per-photon pipeline: pulse type, Alice's choices,
Eve's action (if any), the channel, Bob's detector and measurement, then
sifting. Photons Eve does not touch go through exactly the same channel calls
as in the normal scenario.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum

from .channel import (
    Basis,
    NoiseParams,
    PhotonState,
    RandomStream,
    encode,
    flip_and_depolarize,
    measure,
    random_basis,
    random_bit,
    transmit,
    truncated_normal,
)


class ScenarioKind(Enum):
    """Scenario labels; the values are the dataset label strings."""

    NORMAL = "normal"
    INTERCEPT_RESEND = "mitm_attack"
    PNS = "pns_attack"
    TROJAN_HORSE = "trojan_horse_attack"
    WAVELENGTH_TROJAN = "wavelength_dependent_trojan_attack"
    RNG_ATTACK = "rng_attack"
    DETECTOR_BLINDING = "detector_blinding_attack"
    COMBINED = "combined_attack"

    @property
    def label(self) -> str:
        return self.value


class NoiseLevel(Enum):
    LOW = "low"
    MODERATE = "moderate"
    HIGH = "high"


NOISE_LEVELS = {
    NoiseLevel.LOW: NoiseParams(p_loss=0.10, p_flip=0.01, p_depol=0.01),
    NoiseLevel.MODERATE: NoiseParams(p_loss=0.25, p_flip=0.03, p_depol=0.03),
    NoiseLevel.HIGH: NoiseParams(p_loss=0.35, p_flip=0.05, p_depol=0.06),
}


class PulseType(Enum):
    SIGNAL = "signal"
    DECOY = "decoy"


class DetectorMode(Enum):
    NORMAL = "normal"
    BLINDED = "blinded"


class CombinedAttack(Enum):
    WAVELENGTH = "wavelength"
    BLINDING = "blinding"
    RNG = "rng"


@dataclass(frozen=True)
class SimConfig:
    """Exchange settings.

    Noise resolution order: an explicit ``noise`` wins, then a fixed
    ``noise_level``; with neither, one level is drawn uniformly per exchange.
    """

    n_trans: int = 700
    p_sig: float = 0.7
    p_dec: float = 0.3
    noise_level: NoiseLevel | None = None
    noise: NoiseParams | None = None
    wavelength_legit_nm: float = 1550.0

    def __post_init__(self):
        if self.n_trans < 1:
            raise ValueError(f"n_trans must be >= 1, got {self.n_trans}")
        if not (0.0 <= self.p_sig <= 1.0 and 0.0 <= self.p_dec <= 1.0):
            raise ValueError("pulse probabilities must lie in [0, 1]")
        if abs(self.p_sig + self.p_dec - 1.0) > 1e-12:
            raise ValueError("p_sig + p_dec must equal 1")
        if self.wavelength_legit_nm <= 0:
            raise ValueError("wavelength_legit_nm must be > 0")

    def resolve_noise(self, rng: RandomStream) -> NoiseParams:
        if self.noise is not None:
            return self.noise
        if self.noise_level is not None:
            return NOISE_LEVELS[NoiseLevel(self.noise_level)]
        return NOISE_LEVELS[rng.choice(list(NoiseLevel))]


def _check_probabilities(obj, *names):
    for name in names:
        value = getattr(obj, name)
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{type(obj).__name__}.{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class InterceptResendParams:
    p_err_eve: float = 0.05
    p_depol_eve: float = 0.10
    eve_delay_mean: float = 0.12
    eve_delay_std: float = 0.03

    def __post_init__(self):
        _check_probabilities(self, "p_err_eve", "p_depol_eve")


@dataclass(frozen=True)
class PnsParams:
    p_multi: float = 0.2

    def __post_init__(self):
        _check_probabilities(self, "p_multi")


@dataclass(frozen=True)
class TrojanParams:
    p_inject: float = 0.3
    p_detect_strong: float = 0.95
    p_detect_weak: float = 0.5
    p_mismatch_strong: float = 0.5
    p_mismatch_weak: float = 0.2

    def __post_init__(self):
        _check_probabilities(self, "p_inject", "p_detect_strong", "p_detect_weak",
                             "p_mismatch_strong", "p_mismatch_weak")


@dataclass(frozen=True)
class WavelengthParams:
    """Off-wavelength injection.

    Efficiency roll-off is Gaussian in the detuning, the phase shift is linear
    in it, and so are the extra error probability and the extra delay.
    """

    lambda_set_nm: tuple[float, ...] = (1310.0, 1450.0, 1490.0, 1610.0)
    eta_0: float = 0.95
    sigma_lambda_nm: float = 120.0
    phase_scale: float = math.pi / 300.0
    p_eavesdrop: float = 0.3
    p_error_scale: float = 5e-4
    delay_per_nm: float = 1e-4
    p_inject: float = 0.8

    def __post_init__(self):
        object.__setattr__(self, "lambda_set_nm", tuple(float(v) for v in self.lambda_set_nm))
        if not self.lambda_set_nm:
            raise ValueError("lambda_set_nm must not be empty")
        _check_probabilities(self, "eta_0", "p_eavesdrop", "p_inject")
        if self.sigma_lambda_nm <= 0:
            raise ValueError("sigma_lambda_nm must be > 0")
        if self.p_error_scale < 0:
            raise ValueError("p_error_scale must be >= 0")


@dataclass(frozen=True)
class RngAttackParams:
    """Biased generators plus Eve's pattern exploitation.

    ``b_bit`` is P(bit = 0) and ``b_basis`` is P(rectilinear). When Eve
    exploits a prediction she resends with her own measurement noise.
    """

    b_bit: float = 0.6
    b_basis: float = 0.8
    p_pattern: float = 0.4
    window: int = 5
    p_intercept: float = 0.8
    p_err_eve: float = 0.05
    p_depol_eve: float = 0.10

    def __post_init__(self):
        _check_probabilities(self, "b_bit", "b_basis", "p_pattern", "p_intercept",
                             "p_err_eve", "p_depol_eve")
        if self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass(frozen=True)
class BlindingParams:
    p_blind: float = 0.1
    d_blind: int = 20
    p_inject: float = 0.9
    eta_normal: float = 0.75
    eta_blinded: float = 0.30

    def __post_init__(self):
        _check_probabilities(self, "p_blind", "p_inject", "eta_normal", "eta_blinded")
        if self.d_blind < 1:
            raise ValueError("d_blind must be >= 1")
        if not self.eta_blinded < self.eta_normal:
            raise ValueError("eta_blinded must be below eta_normal")


@dataclass(frozen=True)
class CombinedParams:
    p_wavelength_active: float = 0.3
    p_blinding_active: float = 0.3
    p_rng_active: float = 0.3
    wavelength: WavelengthParams = field(default_factory=WavelengthParams)
    blinding: BlindingParams = field(default_factory=BlindingParams)
    rng: RngAttackParams = field(default_factory=RngAttackParams)

    def __post_init__(self):
        _check_probabilities(self, "p_wavelength_active", "p_blinding_active", "p_rng_active")


PARAMS_FOR_KIND = {
    ScenarioKind.NORMAL: type(None),
    ScenarioKind.INTERCEPT_RESEND: InterceptResendParams,
    ScenarioKind.PNS: PnsParams,
    ScenarioKind.TROJAN_HORSE: TrojanParams,
    ScenarioKind.WAVELENGTH_TROJAN: WavelengthParams,
    ScenarioKind.RNG_ATTACK: RngAttackParams,
    ScenarioKind.DETECTOR_BLINDING: BlindingParams,
    ScenarioKind.COMBINED: CombinedParams,
}


def default_params(kind: ScenarioKind):
    cls = PARAMS_FOR_KIND[ScenarioKind(kind)]
    return None if cls is type(None) else cls()


@dataclass
class EveState:
    rng_history_bits: deque
    rng_history_bases: deque
    blinding_countdown: int = 0
    detector_mode: DetectorMode = DetectorMode.NORMAL

    @classmethod
    def fresh(cls, window: int = 5) -> "EveState":
        return cls(deque(maxlen=window), deque(maxlen=window))


@dataclass(slots=True)
class PhotonRecord:
    index: int
    pulse_type: PulseType
    alice_bit: int
    alice_basis: Basis
    bob_basis: Basis
    bob_bit: int | None
    lost: bool
    sifted: bool
    matched: bool | None
    flight_time: float | None
    eve_touched: bool


@dataclass
class Transcript:
    scenario: ScenarioKind
    records: list[PhotonRecord]
    sent_signal: int = 0
    sent_decoy: int = 0
    lost_signal: int = 0
    lost_decoy: int = 0
    detected_signal: int = 0
    detected_decoy: int = 0
    sifted_bits: int = 0
    mismatches: int = 0
    eve_stored: int = 0

    @classmethod
    def from_records(cls, scenario: ScenarioKind, records: list[PhotonRecord], eve_stored: int = 0) -> "Transcript":
        t = cls(scenario, records, eve_stored=eve_stored)
        for r in records:
            signal = r.pulse_type is PulseType.SIGNAL
            if signal:
                t.sent_signal += 1
            else:
                t.sent_decoy += 1
            if r.lost:
                if signal:
                    t.lost_signal += 1
                else:
                    t.lost_decoy += 1
                continue
            if signal:
                t.detected_signal += 1
            else:
                t.detected_decoy += 1
            if r.sifted:
                t.sifted_bits += 1
                if not r.matched:
                    t.mismatches += 1
        return t

    @property
    def detected(self) -> int:
        return self.detected_signal + self.detected_decoy

    def flight_times(self) -> list[float]:
        """Flight times of detected photons, in record order."""
        return [r.flight_time for r in self.records if not r.lost]

    def check(self) -> None:
        """Raise AssertionError if the counter identities are violated."""
        assert self.sent_signal + self.sent_decoy == len(self.records)
        assert self.lost_signal + self.detected_signal == self.sent_signal
        assert self.lost_decoy + self.detected_decoy == self.sent_decoy
        assert self.sifted_bits <= self.detected
        assert self.mismatches <= self.sifted_bits
        for r in self.records:
            if r.sifted:
                assert not r.lost and r.alice_basis is r.bob_basis and r.matched is not None
            else:
                assert r.matched is None


# --- adversary models -------------------------------------------------------


def eve_intercept_resend(state: PhotonState, p: InterceptResendParams, rng: RandomStream,
                         basis: Basis | None = None) -> tuple[PhotonState, float]:
    """Eve measures in a random basis (or ``basis`` if given), adds her noise, and resends.

    Returns the resent pulse and the delay her interception adds.
    """
    eve_basis = random_basis(rng) if basis is None else basis
    e = measure(state, eve_basis, rng)
    e = flip_and_depolarize(e, p.p_err_eve, p.p_depol_eve, rng)
    resent = PhotonState(e, eve_basis, state.wavelength_nm, state.photon_count)
    return resent, truncated_normal(p.eve_delay_mean, p.eve_delay_std, rng)


def pns_split(state: PhotonState, p: PnsParams, rng: RandomStream) -> tuple[PhotonState, bool]:
    """Draw the pulse intensity; Eve keeps one photon of any multi-photon pulse.

    A pulse that already carries two or more photons is always split.
    """
    count = state.photon_count
    if count < 2 and rng.random() >= 1.0 - p.p_multi:
        count = 2
    if count < 2:
        return state, False
    return replace(state, photon_count=count - 1), True


@dataclass(frozen=True, slots=True)
class InjectionOutcome:
    injected: bool
    strong: bool = False
    detect_prob: float = 1.0
    force_mismatch: bool = False


def trojan_inject(p: TrojanParams, rng: RandomStream) -> InjectionOutcome:
    if rng.random() >= p.p_inject:
        return InjectionOutcome(False)
    if rng.random() < 0.5:
        return InjectionOutcome(True, True, p.p_detect_strong, rng.random() < p.p_mismatch_strong)
    return InjectionOutcome(True, False, p.p_detect_weak, rng.random() < p.p_mismatch_weak)


@dataclass(frozen=True, slots=True)
class WavelengthOutcome:
    injected: bool
    delta_lambda: float = 0.0
    eta: float = 1.0
    extra_phase: float = 0.0
    eavesdropped: bool = False
    extra_error_prob: float = 0.0
    extra_delay: float = 0.0


def wavelength_effects(p: WavelengthParams, lambda_attack_nm: float, lambda_legit_nm: float,
                       eavesdropped: bool = False) -> WavelengthOutcome:
    """Deterministic consequences of injecting at ``lambda_attack_nm``."""
    delta = abs(lambda_attack_nm - lambda_legit_nm)
    return WavelengthOutcome(
        injected=True,
        delta_lambda=delta,
        eta=p.eta_0 * math.exp(-((delta / p.sigma_lambda_nm) ** 2)),
        extra_phase=p.phase_scale * delta,
        eavesdropped=eavesdropped,
        extra_error_prob=min(1.0, p.p_error_scale * delta),
        extra_delay=p.delay_per_nm * delta,
    )


def wavelength_attack(p: WavelengthParams, lambda_legit_nm: float, rng: RandomStream,
                      force: bool = False) -> WavelengthOutcome:
    if not p.lambda_set_nm:
        raise ValueError("lambda_set_nm must not be empty")
    if not force and rng.random() >= p.p_inject:
        return WavelengthOutcome(False)
    lam = rng.choice(p.lambda_set_nm)
    return wavelength_effects(p, lam, lambda_legit_nm, rng.random() < p.p_eavesdrop)


def _strict_majority(history: deque):
    n = len(history)
    if n == 0:
        return None
    ones = sum(1 for v in history if v)
    if 2 * ones > n:
        return 1
    if 2 * (n - ones) > n:
        return 0
    return None


def compromised_rng_next(p: RngAttackParams, st: EveState, rng: RandomStream) -> tuple[int, Basis, bool]:
    """Biased bit/basis draw; Eve predicts it when a full window shows a strict majority it matches."""
    bit = 0 if rng.random() < p.b_bit else 1
    basis = Basis.RECTILINEAR if rng.random() < p.b_basis else Basis.DIAGONAL
    predicts = False
    if len(st.rng_history_bits) >= p.window:
        maj_bit = _strict_majority(st.rng_history_bits)
        maj_basis = _strict_majority(st.rng_history_bases)
        if maj_bit == bit and maj_basis == basis.value:
            predicts = rng.random() < p.p_pattern
    if st.rng_history_bits.maxlen != p.window:
        st.rng_history_bits = deque(st.rng_history_bits, maxlen=p.window)
        st.rng_history_bases = deque(st.rng_history_bases, maxlen=p.window)
    st.rng_history_bits.append(bit)
    st.rng_history_bases.append(basis.value)
    return bit, basis, predicts


def biased_basis(b_basis: float, rng: RandomStream) -> Basis:
    return Basis.RECTILINEAR if rng.random() < b_basis else Basis.DIAGONAL


def blinding_step(p: BlindingParams, st: EveState, rng: RandomStream) -> tuple[DetectorMode, float, bool]:
    """Advance the blinding state machine by one round.

    The triggering round is the first of ``d_blind`` blinded rounds.
    """
    if st.detector_mode is DetectorMode.NORMAL and rng.random() < p.p_blind:
        st.detector_mode = DetectorMode.BLINDED
        st.blinding_countdown = p.d_blind
    if st.detector_mode is DetectorMode.NORMAL:
        return DetectorMode.NORMAL, p.eta_normal, False
    injects = rng.random() < p.p_inject
    st.blinding_countdown -= 1
    if st.blinding_countdown <= 0:
        st.blinding_countdown = 0
        st.detector_mode = DetectorMode.NORMAL
    return DetectorMode.BLINDED, p.eta_blinded, injects


def combined_dispatch(p: CombinedParams, rng: RandomStream) -> frozenset:
    active = set()
    if rng.random() < p.p_wavelength_active:
        active.add(CombinedAttack.WAVELENGTH)
    if rng.random() < p.p_blinding_active:
        active.add(CombinedAttack.BLINDING)
    if rng.random() < p.p_rng_active:
        active.add(CombinedAttack.RNG)
    return frozenset(active)


# --- the exchange -----------------------------------------------------------


def _resolve_params(kind: ScenarioKind, attack_params):
    expected = PARAMS_FOR_KIND[kind]
    if attack_params is None:
        return default_params(kind)
    if not isinstance(attack_params, expected):
        raise ValueError(f"{kind.name} expects {expected.__name__}, got {type(attack_params).__name__}")
    return attack_params


def run_iteration(kind: ScenarioKind, cfg: SimConfig | None = None, attack_params=None,
                  rng: RandomStream | None = None) -> Transcript:
    """Simulate one full key exchange of ``cfg.n_trans`` pulses under ``kind``."""
    kind = ScenarioKind(kind)
    if cfg is None:
        cfg = SimConfig()
    if rng is None:
        raise ValueError("an explicit random stream is required")
    params = _resolve_params(kind, attack_params)
    noise = cfg.resolve_noise(rng)
    lossless = replace(noise, p_loss=0.0)

    if kind is ScenarioKind.COMBINED:
        wl_p, bl_p, rng_p = params.wavelength, params.blinding, params.rng
    else:
        wl_p = params if kind is ScenarioKind.WAVELENGTH_TROJAN else None
        bl_p = params if kind is ScenarioKind.DETECTOR_BLINDING else None
        rng_p = params if kind is ScenarioKind.RNG_ATTACK else None
    eve = EveState.fresh(rng_p.window if rng_p is not None else 5)

    records = []
    eve_stored = 0
    for i in range(cfg.n_trans):
        pulse = PulseType.SIGNAL if rng.random() < cfg.p_sig else PulseType.DECOY

        if kind is ScenarioKind.COMBINED:
            active = combined_dispatch(params, rng)
            wl_on = CombinedAttack.WAVELENGTH in active
            bl_on = CombinedAttack.BLINDING in active
            rng_on = CombinedAttack.RNG in active
        else:
            wl_on = wl_p is not None
            bl_on = bl_p is not None
            rng_on = rng_p is not None

        # Alice
        predicts = False
        if rng_on:
            a_bit, a_basis, predicts = compromised_rng_next(rng_p, eve, rng)
        else:
            a_bit, a_basis = random_bit(rng), random_basis(rng)
        state = PhotonState(a_bit, a_basis, cfg.wavelength_legit_nm, 1)

        # Eve, before the channel
        touched = False
        delay = 0.0
        detect_prob = None        # replaces the channel-loss draw
        eta = None                # extra detector-efficiency draw
        extra_error = 0.0
        force_mismatch = False
        trigger_basis = None      # blinded detector clicks only in this basis

        if bl_on:
            mode, eta, injects = blinding_step(bl_p, eve, rng)
            if mode is DetectorMode.BLINDED and injects:
                touched = True
                trigger_basis = random_basis(rng)
                state = PhotonState(measure(state, trigger_basis, rng), trigger_basis,
                                    state.wavelength_nm, state.photon_count)
                eta = None
        if kind is ScenarioKind.INTERCEPT_RESEND:
            state, delay = eve_intercept_resend(state, params, rng)
            touched = True
        elif kind is ScenarioKind.PNS:
            state, stored = pns_split(state, params, rng)
            if stored:
                touched = True
                eve_stored += 1
        elif kind is ScenarioKind.TROJAN_HORSE:
            inj = trojan_inject(params, rng)
            if inj.injected:
                touched = True
                detect_prob = inj.detect_prob
                force_mismatch = inj.force_mismatch
        if wl_on:
            wo = wavelength_attack(wl_p, cfg.wavelength_legit_nm, rng, force=kind is ScenarioKind.COMBINED)
            if wo.injected:
                touched = True
                eta = wo.eta if eta is None else eta * wo.eta
                delay += wo.extra_delay
                # phase error and wavelength error act as independent flips
                s = math.sin(wo.extra_phase / 2.0) ** 2
                extra_error = s + wo.extra_error_prob - 2.0 * s * wo.extra_error_prob
        if rng_on and predicts and rng.random() < rng_p.p_intercept:
            touched = True
            e = flip_and_depolarize(state.bit, rng_p.p_err_eve, rng_p.p_depol_eve, rng)
            state = PhotonState(e, state.basis, state.wavelength_nm, state.photon_count)

        # channel
        if detect_prob is None:
            out = transmit(state, noise, rng)
            lost = out.lost
        else:
            out = transmit(state, lossless, rng)
            lost = out.lost or rng.random() >= detect_prob

        # Bob
        bob_basis = biased_basis(rng_p.b_basis, rng) if rng_on else random_basis(rng)
        if not lost:
            if trigger_basis is not None:
                lost = bob_basis is not trigger_basis
            elif eta is not None:
                lost = rng.random() >= eta
        if lost:
            records.append(PhotonRecord(i, pulse, a_bit, a_basis, bob_basis, None, True, False,
                                        None, None, touched))
            continue

        bob_bit = measure(PhotonState(out.bit_after_noise, state.basis), bob_basis, rng)
        if extra_error and rng.random() < extra_error:
            bob_bit ^= 1
        sifted = a_basis is bob_basis
        if force_mismatch and sifted:
            bob_bit = a_bit ^ 1
        records.append(PhotonRecord(i, pulse, a_bit, a_basis, bob_basis, bob_bit, False, sifted,
                                    (bob_bit == a_bit) if sifted else None,
                                    out.flight_time + delay, touched))

    return Transcript.from_records(kind, records, eve_stored)
