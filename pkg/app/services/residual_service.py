"""Predictive residual coding.

Both sides predict frame n from their own reconstruction of frame n-1:
c_hat_n = F(c_bar_{n-1}), and c_bar_n = c_hat_n + Q(c_n - c_hat_n). The encoder
feeds back the quantized reconstruction, never the clean feature, so encoder and
decoder states stay identical. All values live on the residual grid in scaled
units, which makes c_bar_n - c_n == r_bar_n - r_n hold exactly.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple, Union

import numpy as np

from app.core.errors import BundleMismatchError, CorruptStreamError
from app.schemas.bitstream import Bitstream, BitstreamHeader, CodedFrame
from app.schemas.features import NB_CEPSTRUM, WINDOW_SIZE, FeatureFrame, FeatureStream, PcmSignal
from app.schemas.predictor import PredictorState, PredictorWeights
from app.schemas.quantization import CodebookSet
from app.services.bitstream_service import decode_header, pack, unpack
from app.services.feature_service import analyze
from app.services.huffman_service import tables_for
from app.services.pitch_service import FRAMES_PER_PACKET, dequantize_pitch, packet_pitch_codes, quantize_pitch
from app.services.predictor_service import predict_step, scale_cepstrum, scale_pitch, unscale
from app.services.quantization_service import dequantize_residual, quantize_residual, snap, snap_prediction
from app.services.synthesis_service import synthesize_stream

logger = logging.getLogger(__name__)


@dataclass
class EncoderState:
    predictor_state: PredictorState
    last_reconstruction: np.ndarray = field(default_factory=lambda: np.zeros(NB_CEPSTRUM))
    frame_index: int = 0

    @classmethod
    def initial(cls, weights: PredictorWeights) -> "EncoderState":
        return cls(predictor_state=PredictorState.zeros(weights))


@dataclass
class DecoderState(EncoderState):
    pass


@dataclass
class FrameTrace:
    """Encoder-internal values for one frame, all scaled units on the residual grid."""

    target: np.ndarray
    prediction: np.ndarray
    residual: np.ndarray
    quantized: np.ndarray
    reconstruction: np.ndarray


def _predict(weights: PredictorWeights, state: EncoderState, pitch: Tuple[int, float]):
    scaled_pitch = scale_pitch(pitch[0], pitch[1], weights.scaler)
    prediction, predictor_state = predict_step(weights, state.predictor_state, state.last_reconstruction, scaled_pitch)
    return snap_prediction(prediction), predictor_state


def encode_frame(
    state: EncoderState,
    frame: FeatureFrame,
    codebooks: CodebookSet,
    weights: PredictorWeights,
    pitch: Optional[Tuple[int, float]] = None,
) -> Tuple[CodedFrame, EncoderState, FrameTrace]:
    """Code one frame.

    ``pitch`` is the (period, correlation) the decoder will see for this frame;
    it defaults to the frame's own pitch passed through the pitch quantizer.
    """

    if pitch is None:
        pitch = dequantize_pitch(quantize_pitch(frame.pitch_period, frame.pitch_correlation))
    prediction, predictor_state = _predict(weights, state, pitch)
    target = snap(scale_cepstrum(frame.cepstrum, weights.scaler))
    residual = target - prediction
    coded = quantize_residual(residual, codebooks)
    quantized = dequantize_residual(coded, codebooks)
    reconstruction = prediction + quantized
    new_state = replace(state, predictor_state=predictor_state, last_reconstruction=reconstruction, frame_index=state.frame_index + 1)
    return coded, new_state, FrameTrace(target, prediction, residual, quantized, reconstruction)


def decode_frame(
    state: DecoderState,
    coded: CodedFrame,
    codebooks: CodebookSet,
    weights: PredictorWeights,
    pitch: Tuple[int, float],
) -> Tuple[FeatureFrame, DecoderState]:
    prediction, predictor_state = _predict(weights, state, pitch)
    reconstruction = prediction + dequantize_residual(coded, codebooks)
    new_state = replace(state, predictor_state=predictor_state, last_reconstruction=reconstruction, frame_index=state.frame_index + 1)
    frame = FeatureFrame(
        cepstrum=unscale(reconstruction, weights.scaler),
        pitch_period=pitch[0],
        pitch_correlation=pitch[1],
    )
    return frame, new_state


@dataclass
class EncodedStream:
    bitstream: Bitstream
    traces: List[FrameTrace] = field(default_factory=list)

    @property
    def reconstructions(self) -> np.ndarray:
        return np.array([t.reconstruction for t in self.traces]).reshape(-1, NB_CEPSTRUM)

    @property
    def residuals(self) -> np.ndarray:
        return np.array([t.residual for t in self.traces]).reshape(-1, NB_CEPSTRUM)

    @property
    def targets(self) -> np.ndarray:
        return np.array([t.target for t in self.traces]).reshape(-1, NB_CEPSTRUM)

    @property
    def quantized(self) -> np.ndarray:
        return np.array([t.quantized for t in self.traces]).reshape(-1, NB_CEPSTRUM)


@dataclass
class DecodedStream:
    header: BitstreamHeader
    frames: List[CodedFrame]
    reconstructions: np.ndarray
    features: FeatureStream
    pcm: Optional[PcmSignal] = None


def encode_frames(
    stream: FeatureStream, codebooks: CodebookSet, weights: PredictorWeights
) -> Tuple[List[CodedFrame], List[FrameTrace]]:
    """Code a whole stream from a fresh state; pitch codes go on the first frame of each packet."""

    codes = packet_pitch_codes(stream)
    state = EncoderState.initial(weights)
    frames: List[CodedFrame] = []
    traces: List[FrameTrace] = []
    for n in range(len(stream)):
        code = int(codes[n // FRAMES_PER_PACKET])
        coded, state, trace = encode_frame(state, stream.frame(n), codebooks, weights, pitch=dequantize_pitch(code))
        if n % FRAMES_PER_PACKET == 0:
            coded = coded.model_copy(update={"pitch_code": code})
        frames.append(coded)
        traces.append(trace)
    return frames, traces


def encode_stream(
    source: Union[FeatureStream, PcmSignal],
    codebooks: CodebookSet,
    weights: PredictorWeights,
    weights_hash: int = 0,
    codebook_hash: int = 0,
) -> EncodedStream:
    if isinstance(source, PcmSignal):
        if len(source) < WINDOW_SIZE:
            logger.warning("Input has %d samples, less than one window; emitting a header-only stream", len(source))
            source = FeatureStream()
        else:
            source = analyze(source)
    frames, traces = encode_frames(source, codebooks, weights)
    bitstream = pack(frames, codebooks, weights_hash, codebook_hash, tables_for(codebooks))
    logger.info(
        "Encoded %d frames with profile %s into %d bytes",
        len(frames),
        codebooks.profile.name.value,
        len(bitstream.data),
    )
    return EncodedStream(bitstream=bitstream, traces=traces)


def check_hashes(header: BitstreamHeader, weights_hash: Optional[int], codebook_hash: Optional[int]) -> None:
    if weights_hash is not None and header.weights_hash != weights_hash:
        raise BundleMismatchError(
            f"bitstream was coded with predictor {header.weights_hash:016x}, bundle has {weights_hash:016x}"
        )
    if codebook_hash is not None and header.codebook_hash != codebook_hash:
        raise BundleMismatchError(
            f"bitstream was coded with codebooks {header.codebook_hash:016x}, bundle has {codebook_hash:016x}"
        )


def decode_frames(frames: List[CodedFrame], codebooks: CodebookSet, weights: PredictorWeights) -> Tuple[np.ndarray, FeatureStream]:
    """Scaled reconstructions and the raw-unit feature stream for a coded frame sequence."""

    state = DecoderState.initial(weights)
    decoded: List[FeatureFrame] = []
    reconstructions = []
    pitch = None
    for n, coded in enumerate(frames):
        if n % FRAMES_PER_PACKET == 0:
            if coded.pitch_code is None:
                raise CorruptStreamError(f"frame {n} starts a packet but carries no pitch code")
            pitch = dequantize_pitch(coded.pitch_code)
        frame, state = decode_frame(state, coded, codebooks, weights, pitch)
        decoded.append(frame)
        reconstructions.append(state.last_reconstruction)
    return np.array(reconstructions).reshape(-1, NB_CEPSTRUM), FeatureStream.from_frames(decoded)


def decode_stream(
    data: Union[bytes, Bitstream],
    codebooks: CodebookSet,
    weights: PredictorWeights,
    weights_hash: Optional[int] = None,
    codebook_hash: Optional[int] = None,
    synthesize: bool = False,
    seed: int = 0,
) -> DecodedStream:
    """Parse, check hashes, then run the decoder recursion; optionally render PCM."""

    raw = data.data if isinstance(data, Bitstream) else bytes(data)
    check_hashes(decode_header(raw), weights_hash, codebook_hash)
    bitstream = unpack(raw, codebooks, tables_for(codebooks))
    reconstructions, features = decode_frames(bitstream.frames, codebooks, weights)
    pcm = synthesize_stream(features, seed=seed) if synthesize else None
    return DecodedStream(
        header=bitstream.header,
        frames=bitstream.frames,
        reconstructions=reconstructions,
        features=features,
        pcm=pcm,
    )
