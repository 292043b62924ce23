"""Peak GPU memory per role."""

from __future__ import annotations

from .model import MemoryModel, Partition, ScheduleMode, TextPlacement, Variant, WorkloadSpec

COLOCATED = "colocated"
DENOISE = "denoise"
DECODE = "decode"


def peak_memory(m: MemoryModel, w: WorkloadSpec, mode: ScheduleMode,
                part: Partition) -> dict:
    """Peak GB for each GPU role the mode uses.

    Colocated without offload keeps every module resident.  With offload
    only the module of the running phase is on the GPU.  DeDiVAE splits the
    weights between the two groups; the text encoder sits with whichever
    group the mode names.
    """
    latent = w.latent_size
    act_den = m.act_denoise_coeff * latent
    act_dec = m.act_decode_coeff * latent
    if mode.variant is Variant.COLOCATED:
        return {COLOCATED: m.w_dit + m.w_vae + m.w_text + max(act_den, act_dec)}
    if mode.variant is Variant.COLOCATED_OFFLOAD:
        return {COLOCATED: max(m.w_text, m.w_dit + act_den, m.w_vae + act_dec)}
    text_on_decode = mode.text_encoder_placement is TextPlacement.WITH_DECODE
    roles = {
        DENOISE: m.w_dit + (0.0 if text_on_decode else m.w_text) + act_den,
        DECODE: m.w_vae + (m.w_text if text_on_decode else 0.0) + act_dec,
    }
    if part.n_decode == 0:
        del roles[DECODE]
    return roles


def per_gpu_peaks(roles: dict, part: Partition) -> list:
    if COLOCATED in roles:
        return [roles[COLOCATED]] * part.n
    return [roles[DENOISE]] * part.n_denoise + [roles.get(DECODE, 0.0)] * part.n_decode


def is_oom(roles: dict, m: MemoryModel) -> bool:
    return any(v > m.gpu_budget for v in roles.values())
