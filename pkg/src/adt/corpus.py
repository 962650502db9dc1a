"""Synthetic multimodal speech corpus with known ground truth.

Each utterance is a character string rendered to a log-mel spectrogram by
stamping a per-character spectral template over that character's frame span,
plus a per-speaker spectral tilt and a small amount of noise. Character
templates have distinct formant-like bumps and distinct overall gains, so
both spectral identity and the energy envelope carry the text. The space
character renders as near-silence.

Video features are "lip" observations at a quarter of the mel frame rate:
16-channel vectors whose first five channels hold a soft one-hot over
viseme groups — characters come in look-alike pairs {a,b}, {c,d}, {e,f},
{g,h}, plus space — and whose remaining channels are noise. Video alone
carries timing and group identity but cannot fully disambiguate
characters; text can.

Ground truth kept per utterance: the text, the exact frame span of every
character, and the speaker tilt. This is what evaluation scores against.

On disk a corpus is: alphabet.txt, templates.adtn, meta.txt, corpus.jsonl
(one record per utterance), and tensors/<id>.{mel,video}.adtn.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields

import numpy as np

from .errors import FormatError, InputError
from .rng import Rng
from .serial import read_tensor, write_tensor
from .text import Alphabet

N_MELS = 80
VIDEO_DIM = 16  # feature width; viseme evidence lives in the first channels
N_VISEME_GROUPS = 5  # four letter-pair groups + silence/space
BASE_LEVEL = -1.0
SPACE_DROP = 0.5  # space sits this far below the base level
FRAMES_PER_VIDEO_FRAME = 4
# every character span stays within this many frames, padding included
CHAR_FRAMES_MIN = 8
CHAR_FRAMES_MAX = 24
# utterance length bounds in frames (0.6 s to 2.0 s at 100 frames/s)
UTT_FRAMES_MIN = 60
UTT_FRAMES_MAX = 200

# char -> viseme group; look-alike pairs share a group
VISEME_GROUP = {"a": 0, "b": 0, "c": 1, "d": 1, "e": 2, "f": 2,
                "g": 3, "h": 3, " ": 4}


@dataclass
class CorpusConfig:
    n_utterances: int = 440
    n_speakers: int = 8
    text_min: int = 6
    text_max: int = 10
    dur_min: int = 10
    dur_max: int = 14
    space_prob: float = 0.15
    mel_noise: float = 0.05
    video_noise: float = 0.1
    tilt_max: float = 0.8

    def validate(self) -> None:
        if self.n_utterances < 20:
            raise InputError("corpus needs at least 20 utterances")
        if not 2 <= self.text_min <= self.text_max:
            raise InputError("bad text length range")
        if not self.dur_min <= self.dur_max:
            raise InputError("bad duration range")
        pad = FRAMES_PER_VIDEO_FRAME - 1
        if self.dur_min < CHAR_FRAMES_MIN or self.dur_max + pad > CHAR_FRAMES_MAX:
            raise InputError(
                f"character durations must stay within "
                f"[{CHAR_FRAMES_MIN}, {CHAR_FRAMES_MAX}] frames, padding included"
            )
        if (self.text_min * self.dur_min < UTT_FRAMES_MIN
                or self.text_max * self.dur_max + pad > UTT_FRAMES_MAX):
            raise InputError(
                f"text and duration ranges must keep utterances within "
                f"[{UTT_FRAMES_MIN}, {UTT_FRAMES_MAX}] frames"
            )
        if self.n_speakers < 2:
            raise InputError("need at least two speakers")


@dataclass
class Utterance:
    id: str
    speaker: int
    text: str
    ids: np.ndarray
    spans: list
    mel: np.ndarray
    video: np.ndarray
    tilt: float

    @property
    def n_frames(self) -> int:
        return self.mel.shape[0]


def char_templates(rng: Rng, alphabet: Alphabet) -> np.ndarray:
    """(n_chars, N_MELS) log-mel templates indexed by label id - 1."""
    bins = np.arange(N_MELS, dtype=np.float64)
    out = np.zeros((len(alphabet.chars), N_MELS), dtype=np.float64)
    letters = [c for c in alphabet.chars if c != " "]
    for k, c in enumerate(alphabet.chars):
        if c == " ":
            out[k] = BASE_LEVEL - SPACE_DROP
            continue
        j = letters.index(c)
        # two formant-like bumps at character-specific bins, plus a
        # character-specific gain so energy envelopes differ too
        c1 = 6.0 + 9.0 * j
        c2 = 76.0 - 9.0 * j
        a1 = 3.0 + 0.4 * rng.uniform()
        a2 = 1.5 + 0.3 * rng.uniform()
        gain = 0.15 * (j - (len(letters) - 1) / 2.0) / max(len(letters) / 2.0, 1)
        out[k] = (BASE_LEVEL + gain
                  + a1 * np.exp(-0.5 * ((bins - c1) / 3.5) ** 2)
                  + a2 * np.exp(-0.5 * ((bins - c2) / 5.0) ** 2))
    return out


def _sample_text(rng: Rng, cfg: CorpusConfig, alphabet: Alphabet) -> str:
    """Letters with occasional single spaces; no adjacent repeats, letter ends."""
    letters = [c for c in alphabet.chars if c != " "]
    length = rng.integers(cfg.text_min, cfg.text_max + 1)
    out = []
    for i in range(length):
        at_edge = i == 0 or i == length - 1
        prev = out[-1] if out else None
        if not at_edge and prev != " " and rng.uniform() < cfg.space_prob:
            out.append(" ")
            continue
        c = letters[rng.integers(0, len(letters))]
        while c == prev:
            c = letters[rng.integers(0, len(letters))]
        out.append(c)
    return "".join(out)


def _render(rng: Rng, cfg: CorpusConfig, alphabet: Alphabet,
            templates: np.ndarray, text: str, tilt: float):
    """-> (mel (T, N_MELS) f32, video (T/4, VIDEO_DIM) f32, spans)."""
    ids = alphabet.encode(text)
    durs = rng.integers(cfg.dur_min, cfg.dur_max + 1, (ids.size,))
    total = int(durs.sum())
    pad = (-total) % FRAMES_PER_VIDEO_FRAME
    durs[-1] += pad  # keep T divisible by the video frame ratio
    total += pad

    tilt_vec = tilt * np.linspace(-1.0, 1.0, N_MELS)
    mel = np.empty((total, N_MELS), dtype=np.float64)
    frame_char = np.empty(total, dtype=np.int64)
    spans = []
    pos = 0
    for label, dur in zip(ids, durs):
        spans.append((pos, pos + int(dur)))
        mel[pos:pos + dur] = templates[label - 1] + tilt_vec
        frame_char[pos:pos + dur] = label
        pos += int(dur)
    mel += rng.normal(mel.shape, std=cfg.mel_noise)

    groups = np.array([VISEME_GROUP[c] for c in alphabet.chars])
    video = np.zeros((total // FRAMES_PER_VIDEO_FRAME, VIDEO_DIM), dtype=np.float64)
    for j in range(video.shape[0]):
        window = frame_char[4 * j:4 * j + 4]
        for label in window:
            video[j, groups[label - 1]] += 1.0 / FRAMES_PER_VIDEO_FRAME
    video += rng.normal(video.shape, std=cfg.video_noise)
    return mel.astype(np.float32), video.astype(np.float32), spans


@dataclass
class ReferencePair:
    """Inference bundle: reference mel as context, masked frames to fill."""

    target: Utterance
    reference: Utterance
    mel_ctx: np.ndarray
    mask: np.ndarray
    video: np.ndarray
    text_ids: np.ndarray

    @property
    def t_ref(self) -> int:
        return self.reference.n_frames


def make_reference_pair(target: Utterance, reference: Utterance) -> ReferencePair:
    """Prompt continuation: reference rows stay context, target rows regenerate.

    The reference supplies the speaker voice (its mel is the unmasked
    context) while the target's video fixes the duration and timing of the
    region to generate; the model reads both texts back to back.
    """
    if reference.speaker != target.speaker:
        raise InputError(
            f"reference speaker {reference.speaker} != target {target.speaker}"
        )
    t_ref, t_tgt = reference.n_frames, target.n_frames
    mel_ctx = np.concatenate(
        [reference.mel, np.zeros((t_tgt, N_MELS), dtype=np.float32)])
    mask = np.concatenate(
        [np.zeros(t_ref, dtype=np.float32), np.ones(t_tgt, dtype=np.float32)])
    video = np.concatenate([reference.video, target.video])
    text_ids = np.concatenate([reference.ids, target.ids])
    return ReferencePair(target=target, reference=reference, mel_ctx=mel_ctx,
                         mask=mask, video=video, text_ids=text_ids)


def build_corpus(cfg: CorpusConfig, seed: int):
    """-> (utterances, alphabet, templates, speaker tilts); fully in memory."""
    cfg.validate()
    alphabet = Alphabet.default()
    root = Rng(seed)
    templates = char_templates(root.split("templates"), alphabet)
    tilts = root.split("speakers").uniform((cfg.n_speakers,),
                                           low=-cfg.tilt_max, high=cfg.tilt_max)
    utterances = []
    for i in range(cfg.n_utterances):
        r = root.split(f"utt{i}")
        speaker = int(r.split("speaker").integers(0, cfg.n_speakers))
        text = _sample_text(r.split("text"), cfg, alphabet)
        mel, video, spans = _render(r.split("render"), cfg, alphabet,
                                    templates, text, float(tilts[speaker]))
        utterances.append(Utterance(
            id=f"utt_{i:05d}", speaker=speaker, text=text,
            ids=alphabet.encode(text), spans=spans, mel=mel, video=video,
            tilt=float(tilts[speaker]),
        ))
    return utterances, alphabet, templates, tilts


class Corpus:
    """Loaded corpus plus the fixed train/eval split and reference pairing."""

    def __init__(self, utterances, alphabet, templates):
        if len(utterances) < 20:
            raise InputError("corpus too small to split")
        self.utterances = utterances
        self.alphabet = alphabet
        self.templates = templates
        n_eval = max(8, len(utterances) // 10)
        self.train = utterances[:-n_eval]
        self.eval = utterances[-n_eval:]

    def reference_for(self, utt: Utterance) -> Utterance:
        """Deterministic same-speaker prompt from the train split.

        Prefers a reference whose last character differs from the target's
        first, so the concatenated label sequence has no adjacent repeat.
        """
        same = [u for u in self.train if u.speaker == utt.speaker
                and u.id != utt.id]
        if not same:
            raise InputError(f"no train utterance shares speaker {utt.speaker}")
        for candidate in same:
            if candidate.text[-1] != utt.text[0]:
                return candidate
        return same[0]


def save_corpus(out_dir: str, cfg: CorpusConfig, seed: int) -> Corpus:
    utterances, alphabet, templates, _ = build_corpus(cfg, seed)
    tensor_dir = os.path.join(out_dir, "tensors")
    os.makedirs(tensor_dir, exist_ok=True)
    alphabet.to_file(os.path.join(out_dir, "alphabet.txt"))
    write_tensor(os.path.join(out_dir, "templates.adtn"), templates)
    with open(os.path.join(out_dir, "meta.txt"), "w") as f:
        f.write(f"seed={seed}\n")
        for fld in fields(cfg):
            f.write(f"{fld.name}={getattr(cfg, fld.name)}\n")
    with open(os.path.join(out_dir, "corpus.jsonl"), "w") as f:
        for u in utterances:
            write_tensor(os.path.join(tensor_dir, f"{u.id}.mel.adtn"), u.mel)
            write_tensor(os.path.join(tensor_dir, f"{u.id}.video.adtn"), u.video)
            record = {
                "id": u.id, "speaker": u.speaker, "text": u.text,
                "tilt": u.tilt,
                "spans": [[s, e] for s, e in u.spans],
                "mel": f"tensors/{u.id}.mel.adtn",
                "video": f"tensors/{u.id}.video.adtn",
            }
            f.write(json.dumps(record, sort_keys=True) + "\n")
    return Corpus(utterances, alphabet, templates)


def load_corpus(root_dir: str) -> Corpus:
    manifest = os.path.join(root_dir, "corpus.jsonl")
    if not os.path.isfile(manifest):
        raise FormatError(f"{root_dir}: no corpus.jsonl, not a corpus directory")
    alphabet = Alphabet.from_file(os.path.join(root_dir, "alphabet.txt"))
    templates = read_tensor(os.path.join(root_dir, "templates.adtn"))
    utterances = []
    with open(manifest) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            mel = read_tensor(os.path.join(root_dir, rec["mel"]))
            video = read_tensor(os.path.join(root_dir, rec["video"]))
            utterances.append(Utterance(
                id=rec["id"], speaker=int(rec["speaker"]), text=rec["text"],
                ids=alphabet.encode(rec["text"]),
                spans=[(int(s), int(e)) for s, e in rec["spans"]],
                mel=mel, video=video, tilt=float(rec["tilt"]),
            ))
    return Corpus(utterances, alphabet, templates)


def decode_by_template(mel: np.ndarray, spans, templates: np.ndarray,
                       alphabet: Alphabet, tilt: float = 0.0) -> str:
    """Nearest-template transcription of known spans (the eval oracle)."""
    tilt_vec = tilt * np.linspace(-1.0, 1.0, N_MELS)
    out = []
    for start, end in spans:
        if not 0 <= start < end <= mel.shape[0]:
            raise InputError(f"span [{start}, {end}) outside {mel.shape[0]} frames")
        avg = mel[start:end].mean(axis=0) - tilt_vec
        dist = np.linalg.norm(templates - avg[None, :], axis=1)
        out.append(alphabet.chars[int(np.argmin(dist))])
    return "".join(out)
