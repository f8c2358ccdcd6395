"""Command line interface: serve, ingest, policy/agreement admin, ask, eval, audit."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .errors import QagateError
from .evalkit.runner import Scenario, default_scenario_dict, run_eval
from .pipeline import GeneratorConfig
from .service import GatewayConfig, GatewayService


def _fail(exc: Exception, code: int = 1):
    payload = {
        "error_code": getattr(exc, "error_code", "error"),
        "message": str(exc),
        "detail": type(exc).__name__,
    }
    click.echo(json.dumps(payload), err=True)
    sys.exit(code)


def _build_service(config_path, data_dir) -> GatewayService:
    if config_path:
        config = GatewayConfig.from_file(config_path)
    else:
        config = GatewayConfig(data_dir=Path(data_dir))
    return GatewayService(config)


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Gateway config file (JSON).")
@click.option("--data-dir", default="./qagate-data", show_default=True,
              help="Data directory when no config file is given.")
@click.pass_context
def main(ctx, config_path, data_dir):
    """Policy-enforcing question answering gateway."""
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["data_dir"] = data_dir


def _service(ctx) -> GatewayService:
    return _build_service(ctx.obj["config_path"], ctx.obj["data_dir"])


@main.command()
@click.option("--host", default=None, help="Override configured listen host.")
@click.option("--port", default=None, type=int, help="Override configured listen port.")
@click.pass_context
def serve(ctx, host, port):
    """Run the HTTP gateway."""
    import uvicorn

    from .gateway import create_app

    try:
        service = _service(ctx)
    except (QagateError, OSError, ValueError) as exc:
        _fail(exc)
    uvicorn.run(
        create_app(service),
        host=host or service.config.host,
        port=port or service.config.port,
    )


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True),
              help="JSON list of {doc_id, asset_id, provider_id, title, path|body}.")
@click.pass_context
def ingest(ctx, manifest):
    """Add manifest documents and index assets that have a stored policy."""
    try:
        service = _service(ctx)
        summaries = service.ingest_manifest(manifest)
    except (QagateError, OSError, ValueError, KeyError) as exc:
        _fail(exc)
    for s in summaries:
        click.echo(json.dumps(
            {"doc_id": s.doc_id, "chunks": s.chunk_count, "tags": s.tag_histogram}
        ))
    if not summaries:
        click.echo(json.dumps({"note": "documents stored; no asset had a policy to index"}))


@main.group()
def policy():
    """Policy management."""


@policy.command("add")
@click.argument("policy_file", type=click.Path(exists=True))
@click.pass_context
def policy_add(ctx, policy_file):
    """Validate and store a policy document."""
    try:
        service = _service(ctx)
        stored = service.add_policy(Path(policy_file).read_bytes())
    except (QagateError, OSError) as exc:
        _fail(exc)
    click.echo(json.dumps({"policy_id": stored.policy_id, "target_asset": stored.target_asset}))


@main.group()
def agreement():
    """Contract agreement management."""


@agreement.command("add")
@click.argument("agreement_file", type=click.Path(exists=True))
@click.pass_context
def agreement_add(ctx, agreement_file):
    """Store an agreement (simulates the contract-finalized callback)."""
    try:
        service = _service(ctx)
        payload = json.loads(Path(agreement_file).read_text(encoding="utf-8"))
        created = service.create_agreement(payload)
    except (QagateError, OSError, ValueError, KeyError) as exc:
        _fail(exc)
    click.echo(json.dumps({"agreement_id": created.agreement_id}))


@main.command()
@click.option("--agreement", "agreement_id", required=True, help="Agreement to ask under.")
@click.argument("question")
@click.pass_context
def ask(ctx, agreement_id, question):
    """One-shot question through the full pipeline, without HTTP."""
    try:
        service = _service(ctx)
        response, _trace = service.ask_agreement(agreement_id, question)
    except (QagateError, OSError) as exc:
        _fail(exc)
    click.echo(json.dumps({
        "kind": response.kind,
        "text": response.text,
        "citations": list(response.citations),
        "rule_ids": list(response.rule_ids),
        "trace_id": response.trace_id,
        "refusal_reason": response.refusal_reason,
    }))


@main.command("eval")
@click.option("--scenario", "scenario_path", required=True, type=click.Path(),
              help="Scenario file (JSON).")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Report output directory.")
@click.option("--init", is_flag=True, default=False,
              help="Write the default demo scenario to --scenario and exit.")
def eval_cmd(scenario_path, out_dir, init):
    """Run an evaluation scenario and write report files."""
    if init:
        Path(scenario_path).write_text(
            json.dumps(default_scenario_dict(), indent=2), encoding="utf-8"
        )
        click.echo(json.dumps({"wrote": scenario_path}))
        return
    try:
        scenario = Scenario.from_file(scenario_path)
        report = run_eval(scenario, out_dir)
    except (QagateError, OSError, ValueError, KeyError) as exc:
        _fail(exc)
    click.echo(json.dumps({"report": str(Path(out_dir) / "report.json"),
                           "summary": str(Path(out_dir) / "summary.txt")}))


@main.group()
def audit():
    """Audit trail inspection."""


@audit.command("tail")
@click.option("-n", "count", default=10, show_default=True, help="Number of records.")
@click.option("--session-id", default=None)
@click.option("--action", default=None)
@click.pass_context
def audit_tail(ctx, count, session_id, action):
    """Print the most recent audit records as JSON lines."""
    try:
        service = _service(ctx)
        result = service.audit.query(session_id=session_id, action=action)
    except (QagateError, OSError) as exc:
        _fail(exc)
    for record in result.records[-count:]:
        click.echo(json.dumps(record.to_dict(), ensure_ascii=False))
    if result.corrupt_count:
        click.echo(json.dumps({"corrupt_count": result.corrupt_count}), err=True)


if __name__ == "__main__":
    main()
