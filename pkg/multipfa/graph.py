"""
LangGraph Workflow Definition
Defines the analyze pipeline: load -> (tic) -> fit -> infer -> factor -> report.
"""

from langgraph.graph import END, StateGraph

from multipfa.stages import (
    factor_stage,
    fit_stage,
    infer_stage,
    load_stage,
    report_stage,
    tic_stage,
)
from multipfa.states import AnalyzeOptions, PipelineState


def _failed(state: dict) -> bool:
    run = state.get("run")
    return run is None or run.failed


def route_after_load(state: dict) -> str:
    """Stop on failure, otherwise normalize only when asked to."""
    if _failed(state):
        return "end"
    return "tic" if state["options"].tic else "fit"


def route_on_failure(next_stage: str):
    """Router that continues to `next_stage` unless the run has failed."""

    def route(state: dict) -> str:
        return "end" if _failed(state) else next_stage

    route.__name__ = f"route_to_{next_stage}"
    return route


def create_graph() -> StateGraph:
    """Create the LangGraph workflow."""

    graph = StateGraph(dict)

    graph.add_node("load", load_stage)
    graph.add_node("tic", tic_stage)
    graph.add_node("fit", fit_stage)
    graph.add_node("infer", infer_stage)
    graph.add_node("factor", factor_stage)
    graph.add_node("report", report_stage)

    graph.set_entry_point("load")

    graph.add_conditional_edges(
        "load", route_after_load, {"tic": "tic", "fit": "fit", "end": END}
    )
    for stage, next_stage in [
        ("tic", "fit"),
        ("fit", "infer"),
        ("infer", "factor"),
        ("factor", "report"),
    ]:
        graph.add_conditional_edges(
            stage, route_on_failure(next_stage), {next_stage: next_stage, "end": END}
        )

    graph.add_edge("report", END)

    return graph


def create_pipeline():
    """Create and compile the analyze graph."""
    return create_graph().compile()


def run_analysis(options: AnalyzeOptions, recursion_limit: int = 25) -> dict:
    """Run the whole analyze pipeline; the returned state carries 'run' and 'outputs'."""
    pipeline = create_pipeline()
    return pipeline.invoke(
        {"options": options, "run": PipelineState(), "outputs": []},
        {"recursion_limit": recursion_limit},
    )


def print_graph_structure(console=None):
    """Print the graph structure for debugging."""
    text = """
    MULTI-PFA ANALYZE - WORKFLOW

    LOAD --[--tic]--> TIC --+
      |                     |
      +---------------------+--> FIT -> INFER -> FACTOR -> REPORT -> [END]

    Any stage that marks the run FAILED routes straight to [END].
    """
    if console is None:
        print(text)
    else:
        console.print(text)
