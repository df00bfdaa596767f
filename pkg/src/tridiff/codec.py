"""Contact-text interaction codec.

Two encoders (one from 690-d contact maps, one from 512-d text embeddings)
map into a shared 128-d latent; a decoder maps the latent back to contact
probabilities. The text side uses a deterministic hashed bag-of-words
embedder, and labels come from a fixed template pool keyed on which body
parts are in contact.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np
import torch
from torch import nn

from .body import HAND_PARTS, SITTING_PARTS
from .container import read_container, write_container

TEXT_DIM = 512
CONTACT_DIM = 690
LATENT_DIM = 128
BCE_EPS = 1e-7


def embed_text(label: str) -> np.ndarray:
    """Deterministic 512-d hashed bag-of-words embedding, unit L2 norm."""
    if not label or not label.strip():
        raise ValueError("cannot embed an empty string")
    vec = np.zeros(TEXT_DIM)
    for token in re.findall(r"[a-z0-9]+", label.lower()):
        digest = hashlib.md5(token.encode("utf-8")).digest()
        idx = int.from_bytes(digest[:4], "little") % TEXT_DIM
        sign = 1.0 if digest[4] & 1 else -1.0
        vec[idx] += sign
    norm = np.linalg.norm(vec)
    if norm < 1e-12:  # pathological total cancellation
        digest = hashlib.md5(label.encode("utf-8")).digest()
        vec[int.from_bytes(digest[:4], "little") % TEXT_DIM] = 1.0
        norm = 1.0
    return vec / norm


# template pool: (template id, eligibility, renderer). "generic" templates are
# always eligible; the others unlock on the contact configuration.
def _part_phrase(parts) -> str:
    words = [p.replace("_", " ") for p in sorted(parts)]
    if len(words) == 1:
        return words[0]
    return ", ".join(words[:-1]) + " and " + words[-1]


def _be(parts) -> str:
    return "is" if len(parts) == 1 else "are"


TEMPLATES = {
    "generic_contact": lambda p, o, rng: f"{_part_phrase(p)} {_be(p)} in contact with {o}",
    "generic_contact_rev": lambda p, o, rng: f"{o} is in contact with {_part_phrase(p)}",
    "generic_touch": lambda p, o, rng: f"{_part_phrase(p)} {'touches' if len(p) == 1 else 'touch'} {o}",
    "generic_touch_rev": lambda p, o, rng: f"{o} touches {_part_phrase(p)}",
    "basketball_dribble": lambda p, o, rng: "a person is dribbling basketball",
    "sitting_parts": lambda p, o, rng: f"{_part_phrase(p)} {_be(p)} on {o}",
    "sitting_person": lambda p, o, rng: f"a person {rng.choice(['is', 'sits'])} on {o}",
    "hands_in": lambda p, o, rng: f"{o} is in {_part_phrase(p)}",
    "hands_hold": lambda p, o, rng: (
        f"{_part_phrase(p)} {rng.choice(['hold', 'grab']) + ('s' if len(p) == 1 else '')} {o}"
    ),
    "hands_person": lambda p, o, rng: (
        f"a person is {rng.choice(['holding', 'grabbing', 'carrying'])} {o}"
    ),
}
GENERIC_TEMPLATES = ("generic_contact", "generic_contact_rev",
                     "generic_touch", "generic_touch_rev")
SITTING_TEMPLATES = ("sitting_parts", "sitting_person")
HANDS_TEMPLATES = ("hands_in", "hands_hold", "hands_person")


def eligible_templates(parts, class_name: str) -> list:
    """Template ids allowed for a contact configuration."""
    pool = list(GENERIC_TEMPLATES)
    if class_name == "basketball":
        pool.append("basketball_dribble")
    if set(parts) & SITTING_PARTS:
        pool.extend(SITTING_TEMPLATES)
    if set(parts) <= HAND_PARTS:
        pool.extend(HANDS_TEMPLATES)
    return pool


def generate_label(parts, class_name: str, rng, pool=None) -> str:
    """Render a label from a uniformly chosen eligible template.

    ``pool`` optionally restricts the candidates (used to train the reduced
    single-template codec variant); it is intersected with eligibility.
    """
    parts = set(parts)
    if not parts:
        raise ValueError("no contact to describe")
    candidates = eligible_templates(parts, class_name)
    if pool is not None:
        candidates = [t for t in candidates if t in pool]
        if not candidates:
            raise ValueError("no eligible template in the restricted pool")
    chosen = candidates[rng.integers(len(candidates))]
    return TEMPLATES[chosen](parts, class_name, rng)


def mirror_label(label: str) -> str:
    """Swap left/right words in a rendered label."""
    def _swap(match):
        return "right" if match.group(0) == "left" else "left"

    return re.sub(r"\b(left|right)\b", _swap, label)


class ContactTextCodec(nn.Module):
    """E_contact, E_text, and the shared decoder. The latent is tanh-bounded
    so downstream diffusion sees a well-scaled channel. The default width
    puts the parameter count near 1.7M."""

    def __init__(self, hidden: int = 448, latent: int = LATENT_DIM):
        super().__init__()
        self.latent = latent
        self.enc_contact = nn.Sequential(
            nn.Linear(CONTACT_DIM, hidden), nn.SiLU(),
            nn.Linear(hidden, hidden), nn.SiLU(),
            nn.Linear(hidden, latent), nn.Tanh(),
        )
        self.enc_text = nn.Sequential(
            nn.Linear(TEXT_DIM, hidden), nn.SiLU(),
            nn.Linear(hidden, hidden), nn.SiLU(),
            nn.Linear(hidden, latent), nn.Tanh(),
        )
        self.dec_contact = nn.Sequential(
            nn.Linear(latent, hidden), nn.SiLU(),
            nn.Linear(hidden, hidden), nn.SiLU(),
            nn.Linear(hidden, CONTACT_DIM), nn.Sigmoid(),
        )
        self.hidden = hidden
        self.fitted = False

    def _require_fitted(self):
        if not self.fitted:
            raise RuntimeError("codec not fitted")

    # torch paths (no fitted check; used during fitting and by guidance)
    def encode_contact_t(self, c: torch.Tensor) -> torch.Tensor:
        return self.enc_contact(c)

    def encode_text_t(self, e: torch.Tensor) -> torch.Tensor:
        return self.enc_text(e)

    def decode_t(self, z: torch.Tensor) -> torch.Tensor:
        return self.dec_contact(z)

    # numpy facades over the fitted codec
    def _run(self, net, x, dim):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        x2 = np.atleast_2d(x)
        if x2.shape[1] != dim:
            raise ValueError(f"expected dimension {dim}, got {x2.shape[1]}")
        dtype = next(self.parameters()).dtype
        with torch.no_grad():
            out = net(torch.as_tensor(x2, dtype=dtype)).double().numpy()
        return out[0] if squeeze else out

    def encode_contact(self, c) -> np.ndarray:
        self._require_fitted()
        return self._run(self.enc_contact, c, CONTACT_DIM)

    def encode_text(self, embedding) -> np.ndarray:
        self._require_fitted()
        return self._run(self.enc_text, embedding, TEXT_DIM)

    def decode_contact(self, z) -> np.ndarray:
        self._require_fitted()
        return self._run(self.dec_contact, z, LATENT_DIM)


def _bce(prob: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Binary cross entropy of a multivariate Bernoulli: per-sample sum over
    map entries (the negative log-likelihood), averaged over the batch."""
    prob = prob.clamp(BCE_EPS, 1.0 - BCE_EPS)
    elementwise = -(target * prob.log() + (1.0 - target) * (1.0 - prob).log())
    return elementwise.sum(dim=-1).mean()


def ct_loss(codec: ContactTextCodec, text_embeddings: torch.Tensor,
            contacts: torch.Tensor):
    """Codec training loss: contact autoencoding BCE + text-to-contact BCE +
    latent similarity. Returns (total, components dict)."""
    if text_embeddings.shape[0] != contacts.shape[0]:
        raise ValueError("batch size mismatch between labels and contacts")
    if contacts.shape[-1] != CONTACT_DIM or text_embeddings.shape[-1] != TEXT_DIM:
        raise ValueError("bad feature dimensions")
    z_c = codec.encode_contact_t(contacts)
    z_t = codec.encode_text_t(text_embeddings)
    auto = _bce(codec.decode_t(z_c), contacts)
    text = _bce(codec.decode_t(z_t), contacts)
    similarity = (z_t - z_c).norm(dim=-1).mean()
    total = auto + text + similarity
    return total, {"autoencode": auto, "text": text, "similarity": similarity}


def fit_codec(codec: ContactTextCodec, labels, contacts, epochs: int = 70,
              batch_size: int = 16, lr: float = 1e-3, seed: int = 0,
              extra_contacts=None):
    """Fit on (label, contact) pairs; ``extra_contacts`` are unlabeled maps
    that train the autoencoding path only. Returns per-epoch mean losses."""
    embeddings = torch.as_tensor(
        np.stack([embed_text(lb) for lb in labels]), dtype=torch.float32)
    contacts = torch.as_tensor(np.asarray(contacts), dtype=torch.float32)
    extras = None
    if extra_contacts is not None and len(extra_contacts):
        extras = torch.as_tensor(np.asarray(extra_contacts), dtype=torch.float32)

    gen = torch.Generator().manual_seed(seed)
    optim = torch.optim.Adam(codec.parameters(), lr=lr)
    history = []
    n = contacts.shape[0]
    for _ in range(epochs):
        order = torch.randperm(n, generator=gen)
        sums = {"autoencode": 0.0, "text": 0.0, "similarity": 0.0}
        batches = 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            total, parts = ct_loss(codec, embeddings[idx], contacts[idx])
            if extras is not None:
                eidx = torch.randint(extras.shape[0], (len(idx),), generator=gen)
                batch = extras[eidx]
                total = total + _bce(codec.decode_t(codec.encode_contact_t(batch)), batch)
            optim.zero_grad()
            total.backward()
            optim.step()
            for key in sums:
                sums[key] += float(parts[key].detach())
            batches += 1
        history.append({k: v / batches for k, v in sums.items()})
    codec.fitted = True
    return history


def save_codec(codec: ContactTextCodec, path) -> None:
    arrays = {f"param/{k}": v.detach().numpy() for k, v in codec.state_dict().items()}
    write_container(path, manifest={
        "kind": "codec_checkpoint", "hidden": codec.hidden,
        "latent": codec.latent, "fitted": codec.fitted,
    }, arrays=arrays)


def load_codec(path) -> ContactTextCodec:
    manifest, arrays = read_container(path)
    if manifest.get("kind") != "codec_checkpoint":
        raise ValueError("container does not hold a codec checkpoint")
    codec = ContactTextCodec(hidden=manifest["hidden"], latent=manifest["latent"])
    state = {k[len("param/"):]: torch.as_tensor(v)
             for k, v in arrays.items() if k.startswith("param/")}
    codec.load_state_dict(state)
    codec.fitted = bool(manifest["fitted"])
    return codec
