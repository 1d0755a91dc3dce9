import numpy as np
import pandas as pd
import streamlit as st
from sqlalchemy import select

from core.db import EvaluationRecord, FinalResultRecord, GenerationRecord, SessionLocal, create_tables
from core.redis_client import LATEST_KEY, get_snapshot


@st.cache_data(ttl=30)
def load_runs() -> list:
    create_tables()
    with SessionLocal() as db:
        return [row for (row,) in db.execute(select(GenerationRecord.run_id).distinct()).all()]


def _frame(model, run_id: str) -> pd.DataFrame:
    with SessionLocal() as db:
        rows = db.execute(select(model).where(model.run_id == run_id)).scalars().all()
        columns = [column.name for column in model.__table__.columns]
        return pd.DataFrame([{name: getattr(row, name) for name in columns} for row in rows], columns=columns)


@st.cache_data(ttl=30)
def load_run(run_id: str):
    generations = _frame(GenerationRecord, run_id).sort_values("generation")
    evaluations = _frame(EvaluationRecord, run_id)
    finals = _frame(FinalResultRecord, run_id)
    return generations, evaluations, finals


def render_header():
    st.title("CNN Architecture Evolution")
    st.caption("Truncated-training fitness, per-generation progress and final results")
    latest = get_snapshot(LATEST_KEY)
    if latest:
        cols = st.columns(3)
        cols[0].metric("Latest generation", latest.get("generation"))
        cols[1].metric("Best mean error", f"{latest.get('best_mean_error', 0):.4f}")
        cols[2].metric("Best parameter count", f"{latest.get('best_param_count', 0):,}")


def render_progress(generations: pd.DataFrame):
    st.subheader("Error per generation", anchor=False)
    if generations.empty:
        st.info("No generations recorded for this run yet.")
        return
    indexed = generations.set_index("generation")
    st.line_chart(indexed[["best_mean_error", "mean_mean_error", "worst_mean_error"]])
    st.subheader("Best individual size", anchor=False)
    st.line_chart(indexed[["best_param_count"]])


def render_tiers(evaluations: pd.DataFrame):
    st.subheader("Accuracy tiers", anchor=False)
    viable = evaluations[evaluations["diverged"] == 0]
    if viable.empty:
        st.info("No evaluated individuals yet.")
        return
    viable = viable.assign(accuracy_tier=np.floor((1.0 - viable["mean_error"]) * 100.0 + 1e-9).astype(int))
    tiers = (
        viable.sort_values("param_count")
        .groupby("accuracy_tier", as_index=False)
        .first()[["accuracy_tier", "param_count", "mean_error", "individual_id"]]
        .sort_values("accuracy_tier", ascending=False)
    )
    st.dataframe(tiers, hide_index=True)
    st.scatter_chart(viable, x="param_count", y="mean_error")


def render_finals(finals: pd.DataFrame):
    st.subheader("Final training", anchor=False)
    if finals.empty:
        st.info("Run final-train or compare-init to populate this section.")
        return
    st.dataframe(finals.drop(columns=["id"]).set_index("timestamp"))


def main():
    st.set_page_config(page_title="CNN Evolution Monitor", layout="wide")
    render_header()
    runs = load_runs()
    if not runs:
        st.info("No runs in the results store. Start one with `python cli.py evolve`.")
        return
    run_id = st.selectbox("Run", runs)
    generations, evaluations, finals = load_run(run_id)
    render_progress(generations)
    st.divider()
    col1, col2 = st.columns(2)
    with col1:
        render_tiers(evaluations)
    with col2:
        render_finals(finals)


if __name__ == "__main__":
    main()
