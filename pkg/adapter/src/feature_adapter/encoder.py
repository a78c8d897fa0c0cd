"""Frozen LXMERT-class cross-modal encoder wrapper.

The encoder consumes pre-extracted region features (2048-d appearance plus
4-d normalized boxes, 36 regions per image) and a question string, and
returns 768-d object embeddings, token embeddings, and the fused pooled
vector. It always runs in evaluation mode on a fixed device, so outputs
are deterministic for fixed weights and inputs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from transformers import LxmertConfig, LxmertModel, LxmertTokenizer

from .errors import ExportError

ENCODER_WIDTH = 768

# Minimal WordPiece inventory for the self-contained test encoder: specials,
# single characters with continuation pieces, and common question words.
_TEST_VOCAB_WORDS = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    *list("abcdefghijklmnopqrstuvwxyz0123456789"),
    *[f"##{c}" for c in "abcdefghijklmnopqrstuvwxyz0123456789"],
    "what", "is", "the", "color", "of", "a", "an", "in", "on", "this",
    "image", "object", "how", "many", "kind", "brand", "place", "can",
    "you", "see", "there", "?",
]


class CrossModalEncoder:
    """A pretrained encoder held frozen behind a small encode() surface."""

    def __init__(self, model: LxmertModel, tokenizer: LxmertTokenizer,
                 device: str = "cpu"):
        self.device = torch.device(device)
        self.model = model.to(self.device)
        self.model.eval()
        self.tokenizer = tokenizer
        if model.config.hidden_size != ENCODER_WIDTH:
            raise ExportError(
                f"encoder hidden size {model.config.hidden_size} != "
                f"{ENCODER_WIDTH}; the interchange format expects "
                f"{ENCODER_WIDTH}-d outputs")

    @classmethod
    def load(cls, path_or_id: str | Path, device: str = "cpu",
             ) -> "CrossModalEncoder":
        try:
            model = LxmertModel.from_pretrained(str(path_or_id))
            tokenizer = LxmertTokenizer.from_pretrained(str(path_or_id))
        except Exception as exc:
            raise ExportError(f"failed to load encoder from "
                              f"{path_or_id}: {exc}") from exc
        return cls(model, tokenizer, device=device)

    @torch.no_grad()
    def encode(self, question: str, features: np.ndarray,
               boxes: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (objects (K, 768), tokens (D, 768), fused (768,))."""
        encoded = self.tokenizer(question, return_tensors="pt")
        visual_feats = torch.from_numpy(
            np.ascontiguousarray(features, dtype=np.float32))[None]
        visual_pos = torch.from_numpy(
            np.ascontiguousarray(boxes, dtype=np.float32))[None]
        output = self.model(
            input_ids=encoded["input_ids"].to(self.device),
            attention_mask=encoded["attention_mask"].to(self.device),
            visual_feats=visual_feats.to(self.device),
            visual_pos=visual_pos.to(self.device),
        )
        objects = output.vision_output[0].cpu().numpy()
        tokens = output.language_output[0].cpu().numpy()
        fused = output.pooled_output[0].cpu().numpy()
        return objects, tokens, fused


def make_test_encoder(out_dir: Path | str, seed: int = 7) -> Path:
    """Create and save a tiny seeded encoder for offline smoke runs.

    One layer per stack, real 768-wide outputs, random but reproducible
    weights, and a minimal WordPiece vocabulary. Useful wherever full
    pretrained weights are unavailable.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab_path = out_dir / "vocab.txt"
    vocab_path.write_text("\n".join(_TEST_VOCAB_WORDS) + "\n",
                          encoding="utf-8")

    config = LxmertConfig(
        vocab_size=len(_TEST_VOCAB_WORDS),
        hidden_size=ENCODER_WIDTH,
        num_attention_heads=4,
        intermediate_size=128,
        l_layers=1,
        x_layers=1,
        r_layers=1,
        visual_feat_dim=2048,
        visual_pos_dim=4,
    )
    torch.manual_seed(seed)
    model = LxmertModel(config)
    model.save_pretrained(out_dir)
    tokenizer = LxmertTokenizer(vocab_file=str(vocab_path))
    tokenizer.save_pretrained(out_dir)
    return out_dir
