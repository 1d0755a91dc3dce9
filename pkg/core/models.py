from datetime import datetime
from typing import Optional

from pydantic import BaseModel, Field, root_validator


class FitnessRecord(BaseModel):
    mean_error: float = Field(..., ge=0.0, le=1.0)
    std_error: float = Field(..., ge=0.0, le=0.5)
    param_count: int = Field(..., ge=0)
    epochs_used: int = Field(..., ge=1)
    diverged: bool = False

    class Config:
        allow_mutation = False

    @root_validator(skip_on_failure=True)
    def diverged_is_worst(cls, values):
        if values['diverged'] and (values['mean_error'] != 1.0 or values['std_error'] != 0.0):
            raise ValueError('diverged records must carry mean_error=1.0 and std_error=0.0')
        return values

    @classmethod
    def worst(cls, param_count: int = 0, epochs_used: int = 1) -> "FitnessRecord":
        return cls(mean_error=1.0, std_error=0.0, param_count=param_count, epochs_used=epochs_used, diverged=True)


class GenerationStats(BaseModel):
    generation: int
    best_mean_error: float
    mean_mean_error: float
    worst_mean_error: float
    best_param_count: int
    best_id: str
    evaluations: int = 0
    wall_seconds: float = 0.0

    def to_record(self) -> dict:
        """History-log form; timing is left out so equal runs give equal bytes."""
        return self.dict(exclude={'wall_seconds'})


class InitializerComparison(BaseModel):
    individual_id: str
    seed: int
    gaussian_error: float
    xavier_error: float

    @property
    def difference(self) -> float:
        return self.xavier_error - self.gaussian_error


class FinalTrainResult(BaseModel):
    individual_id: str
    param_count: int
    epochs: int
    test_error: float
    final_loss: Optional[float] = None
    timestamp: datetime = Field(default_factory=datetime.utcnow)
