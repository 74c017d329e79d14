import pytest
import torch

from spgan_kit.synthetic import StyleTransform, SyntheticDomainSpec, generate_synthetic_pair

torch.set_num_threads(1)

SMALL_H, SMALL_W = 32, 16

SOURCE_STYLE = StyleTransform(background=(0.55, 0.55, 0.6))
TARGET_STYLE = StyleTransform(
    hue_shift=0.45, saturation=0.5, brightness=0.8, contrast=0.8, blur=0.5, noise=0.03,
    background=(0.35, 0.45, 0.3), background_texture=0.4,
)


def small_specs(n_src=4, n_tgt=4, per_id=4, n_test=3, h=SMALL_H, w=SMALL_W):
    src = SyntheticDomainSpec(n_identities=n_src, images_per_identity=per_id, n_cameras=2,
                              style=SOURCE_STYLE, render_seed=1, height=h, width=w)
    tgt = SyntheticDomainSpec(n_identities=n_tgt, images_per_identity=per_id, n_cameras=2,
                              style=TARGET_STYLE, render_seed=2, identity_offset=100,
                              n_test_identities=n_test, test_images_per_identity=4, height=h, width=w)
    return src, tgt


@pytest.fixture(scope="session")
def tiny_pair(tmp_path_factory):
    """Small rendered benchmark shared by the module tests (32x16 pixels)."""
    out = tmp_path_factory.mktemp("tiny")
    src, tgt = small_specs()
    source, target = generate_synthetic_pair(src, tgt, out)
    return out, source, target


_ACCEPTANCE: dict[int, str] = {}


def record_acceptance(criterion: int, ok: bool, detail: str) -> None:
    _ACCEPTANCE[criterion] = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    print(_ACCEPTANCE[criterion])


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
