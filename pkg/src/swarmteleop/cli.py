"""Command-line client for the teleoperation service.

Every subcommand talks to the REST API. By default the app is mounted
in-process (no server needed); pass --server to target a running
instance instead. `serve` and `fly --serve` start the real service for
cockpit clients.
"""

from __future__ import annotations

import json
import sys

import click
import httpx

from .config import CONFIG_ENV_VAR, load_config


class ApiClient:
    """HTTP client bound either to a live server or an embedded app."""

    def __init__(self, server: str | None, config_path: str | None):
        self.config = load_config(config_path)
        if server:
            self._client = httpx.Client(base_url=server, timeout=300.0)
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app(self.config, lockstep=True))

    def post(self, path: str, payload: dict) -> dict:
        response = self._client.post(path, json=payload)
        if response.status_code >= 400:
            try:
                detail = response.json().get("detail", response.text)
            except ValueError:
                detail = response.text
            raise click.ClickException(f"{path}: {detail}")
        return response.json()

    def get(self, path: str) -> dict:
        response = self._client.get(path)
        response.raise_for_status()
        return response.json()


pass_client = click.make_pass_decorator(ApiClient)


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Target a running service instead of embedding one.")
@click.option("--config", "config_path", default=None, envvar=CONFIG_ENV_VAR,
              type=click.Path(exists=True), help="Config file (YAML/JSON).")
@click.pass_context
def main(ctx, server, config_path):
    """Hand-motion swarm teleoperation workbench."""
    ctx.obj = ApiClient(server, config_path)


@main.command()
@click.option("--pilot", "strategy", default="rh-position", show_default=True,
              help="Synthetic operator strategy.")
@click.option("--noise", "noise_level", default=0.01, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--from", "from_session", default=None, type=click.Path(exists=True),
              help="Re-validate and rewrite an existing session file.")
@click.option("--out", required=True, type=click.Path(), help="Session file to write.")
@pass_client
def calibrate(client: ApiClient, strategy, noise_level, seed, from_session, out):
    """Record a calibration session (synthetic pilot or existing file)."""
    if from_session:
        from .sessionio import load_session, save_session

        session = load_session(from_session)
        save_session(session, out)
        click.echo(f"rewrote {len(session.rows)} samples -> {out}")
        return
    result = client.post("/api/calibrate", {
        "strategy": strategy, "noise_level": noise_level, "seed": seed, "out": out,
    })
    click.echo(
        f"calibrated {result['rows']} samples over {result['duration']:.1f}s "
        f"({'+'.join(result['layout'])} hand), {len(result['boundaries'])} maneuvers -> {out}"
    )


@main.command()
@click.option("--session", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Model file to write.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@pass_client
def train(client: ApiClient, session, out, as_json):
    """Train a mapping model from a session and print the selection report."""
    result = client.post("/api/train", {"session": session, "out": out})
    if as_json:
        click.echo(json.dumps(result, indent=2))
        return
    click.echo(f"model -> {out}  (session sha256 {result['session_hash'][:12]})")
    click.echo("per-DoF selection:")
    for dof in result["dofs"]:
        feats = ", ".join(f"{f['name']}[{f['tag']}]" for f in dof["selected"])
        click.echo(
            f"  {dof['dof']:<10} {dof['control_style']:<9} ridge={dof['ridge']:.2e}  {feats}"
        )
    click.echo("variables within 90% of the top correlation:")
    for dof, entries in result["report"].items():
        summary = ", ".join(
            f"{e['name']}[{e['tag']}] r={e['correlation']:.3f}" for e in entries[:4]
        )
        click.echo(f"  {dof:<10} {summary}")


@main.command()
@click.option("--model", required=True, type=click.Path(exists=True))
@click.option("--course", default=None, type=click.Path(exists=True))
@click.option("--pilot", "strategy", default="rh-position", show_default=True)
@click.option("--noise", "noise_level", default=0.01, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--no-expand", is_flag=True, help="Ablation: never command expansion.")
@click.option("--out", default=None, type=click.Path(), help="Metrics file to write.")
@click.option("--serve", is_flag=True,
              help="Start the live service for a cockpit instead of a pilot run.")
@pass_client
def fly(client: ApiClient, model, course, strategy, noise_level, seed,
        no_expand, out, serve):
    """Fly the gated course with a scripted pilot, or serve a live session."""
    if serve:
        _serve(client.config, course, model)
        return
    result = client.post("/api/fly", {
        "model": model, "course": course, "strategy": strategy,
        "noise_level": noise_level, "seed": seed,
        "expand": not no_expand, "out": out,
    })
    status = "completed" if result["completed"] else "DID NOT FINISH"
    click.echo(
        f"{status}: {result['gates_crossed']}/4 gates in {result['total_time']:.1f}s, "
        f"{result['collision_count']} collisions"
    )
    if result["segment_times"]:
        splits = "  ".join(
            f"gate{i + 1}: {t:.1f}s" for i, t in enumerate(result["segment_times"])
        )
        click.echo(f"  splits: {splits}")
    if out:
        click.echo(f"  metrics -> {out}")
    if not result["completed"] or result["collision_count"]:
        sys.exit(2)


@main.command()
@click.argument("metrics", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--group-by", default="strategy", show_default=True,
              help="Context key that defines comparison groups.")
@pass_client
def evaluate(client: ApiClient, metrics, group_by):
    """Summarize metrics files and compare groups (Kruskal-Wallis)."""
    result = client.post("/api/evaluate", {
        "metrics": list(metrics), "group_by": group_by,
    })
    header = f"{'group':<22}{'runs':>5}{'mean t':>9}{'median t':>10}{'coll':>6}{'done':>6}"
    click.echo(header)
    click.echo("-" * len(header))
    for g in result["groups"]:
        click.echo(
            f"{g['group']:<22}{g['runs']:>5}{g['mean_total_time']:>9.1f}"
            f"{g['median_total_time']:>10.1f}{g['mean_collisions']:>6.1f}"
            f"{g['completion_rate']:>6.0%}"
        )
    for kw in result["kruskal"]:
        click.echo(
            f"Kruskal-Wallis [{kw['measure']}]: H={kw['h_statistic']:.3f} "
            f"p={kw['p_value']:.4f} over {len(kw['groups'])} groups"
        )


@main.command()
@click.option("--session", required=True, type=click.Path(exists=True))
@click.option("--speed", default=1.0, show_default=True)
@pass_client
def replay(client: ApiClient, session, speed):
    """Re-broadcast a recorded session to connected cockpit clients."""
    result = client.post("/api/replay", {"session": session, "speed": speed})
    click.echo(f"replaying {result['rows']} rows to {result['clients']} client(s)")


@main.command()
@click.option("--course", default=None, type=click.Path(exists=True))
@click.option("--model", default=None, type=click.Path(exists=True),
              help="Preload a model so the session starts Ready.")
@click.option("--host", default=None)
@click.option("--port", default=None, type=int)
@pass_client
def serve(client: ApiClient, course, model, host, port):
    """Run the live service (websocket + REST) for cockpit clients."""
    _serve(client.config, course, model, host, port)


def _serve(config, course_path, model_path, host=None, port=None):
    import uvicorn

    from .service import create_app

    app = create_app(config, course_path=course_path, model_path=model_path)
    uvicorn.run(
        app,
        host=host or config.service.host,
        port=port or config.service.port,
        log_level="info",
    )


if __name__ == "__main__":
    main()
