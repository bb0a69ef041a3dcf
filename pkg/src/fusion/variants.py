"""The seven compared models: clinical references, the CNN alone, and the fused models."""
from typing import Dict, Literal, Tuple

from pydantic import BaseModel, ConfigDict

from src.fusion.features import CLINICAL_FEATURES, CNN_FEATURES, KL_FEATURE

BASIC_CLINICAL = ("age", "sex", "bmi", KL_FEATURE)
FULL_CLINICAL = CLINICAL_FEATURES + (KL_FEATURE,)


class ModelVariant(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int
    name: str
    kind: Literal["lr", "gbm", "cnn"]
    features: Tuple[str, ...] = ()

    @property
    def include_kl(self) -> bool:
        return KL_FEATURE in self.features

    @property
    def uses_cnn(self) -> bool:
        return self.kind == "cnn" or any(name in CNN_FEATURES for name in self.features)

    @property
    def key(self) -> str:
        return f"model_{self.id}"


VARIANTS: Dict[int, ModelVariant] = {
    1: ModelVariant(id=1, name="LR: age, sex, BMI, KL", kind="lr", features=BASIC_CLINICAL),
    2: ModelVariant(id=2, name="LR: age, sex, BMI, injury, surgery, WOMAC, KL", kind="lr", features=FULL_CLINICAL),
    3: ModelVariant(id=3, name="GBM: age, sex, BMI, KL", kind="gbm", features=BASIC_CLINICAL),
    4: ModelVariant(id=4, name="GBM: age, sex, BMI, injury, surgery, WOMAC, KL", kind="gbm", features=FULL_CLINICAL),
    5: ModelVariant(id=5, name="CNN", kind="cnn"),
    6: ModelVariant(id=6, name="CNN + clinical (GBM)", kind="gbm", features=CNN_FEATURES + CLINICAL_FEATURES),
    7: ModelVariant(id=7, name="CNN + clinical + KL (GBM)", kind="gbm", features=CNN_FEATURES + FULL_CLINICAL),
}


def get_variant(variant_id: int) -> ModelVariant:
    if variant_id not in VARIANTS:
        raise KeyError(f"unknown model variant {variant_id}; choose from {sorted(VARIANTS)}")
    return VARIANTS[variant_id]
