from datetime import datetime

from sqlalchemy import Column, DateTime, Float, Integer, String, Text, create_engine, inspect
from sqlalchemy.exc import NoSuchModuleError
from sqlalchemy.orm import declarative_base, sessionmaker

from core.config import get_settings

settings = get_settings()


def _build_engine(url: str):
    try:
        return create_engine(url, future=True)
    except (NoSuchModuleError, ModuleNotFoundError):
        fallback = "sqlite:///./evolution.db"
        return create_engine(fallback, future=True)


engine = _build_engine(settings.database_url)
engine.inspect = inspect
SessionLocal = sessionmaker(bind=engine, autoflush=False, autocommit=False)

Base = declarative_base()


class GenerationRecord(Base):
    __tablename__ = 'generations'

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String(64), index=True)
    generation = Column(Integer, index=True)
    best_mean_error = Column(Float)
    mean_mean_error = Column(Float)
    worst_mean_error = Column(Float)
    best_param_count = Column(Integer)
    best_id = Column(String(32))
    evaluations = Column(Integer)
    wall_seconds = Column(Float)
    timestamp = Column(DateTime, default=datetime.utcnow, index=True)


class EvaluationRecord(Base):
    __tablename__ = 'evaluations'

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String(64), index=True)
    generation = Column(Integer, index=True)
    individual_id = Column(String(32), index=True)
    mean_error = Column(Float)
    std_error = Column(Float)
    param_count = Column(Integer)
    diverged = Column(Integer, default=0)
    wall_seconds = Column(Float)
    timestamp = Column(DateTime, default=datetime.utcnow, index=True)


class FinalResultRecord(Base):
    __tablename__ = 'final_results'

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String(64), index=True)
    individual_id = Column(String(32), index=True)
    kind = Column(String(32))
    param_count = Column(Integer)
    epochs = Column(Integer)
    test_error = Column(Float)
    xavier_error = Column(Float, nullable=True)
    details = Column(Text)
    timestamp = Column(DateTime, default=datetime.utcnow, index=True)


def create_tables() -> None:
    Base.metadata.create_all(bind=engine)


class ResultsStore:
    """Writes run telemetry rows; one short session per write."""

    def __init__(self, run_id: str, session_factory=SessionLocal) -> None:
        self.run_id = run_id
        self.session_factory = session_factory

    def _add(self, record) -> None:
        db = self.session_factory()
        try:
            db.add(record)
            db.commit()
        finally:
            db.close()

    def add_generation(self, stats) -> None:
        self._add(GenerationRecord(run_id=self.run_id, **stats.dict()))

    def add_evaluation(self, generation: int, individual_id: str, fitness, wall_seconds: float) -> None:
        self._add(
            EvaluationRecord(
                run_id=self.run_id,
                generation=generation,
                individual_id=individual_id,
                mean_error=fitness.mean_error,
                std_error=fitness.std_error,
                param_count=fitness.param_count,
                diverged=int(fitness.diverged),
                wall_seconds=wall_seconds,
            )
        )

    def add_final_result(
        self,
        kind: str,
        individual_id: str,
        param_count: int,
        epochs: int,
        test_error: float,
        xavier_error: float | None = None,
        details: str = "",
    ) -> None:
        self._add(
            FinalResultRecord(
                run_id=self.run_id,
                individual_id=individual_id,
                kind=kind,
                param_count=param_count,
                epochs=epochs,
                test_error=test_error,
                xavier_error=xavier_error,
                details=details,
            )
        )
