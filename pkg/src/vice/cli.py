"""``vice`` command line.

Every option can also come from a flat ``key = value`` file passed with
``vice --config FILE <command>``; flags given on the command line win.
Failures print one ``E_CODE: message`` line on stderr and exit with 2.
"""

from __future__ import annotations

import csv
import io
import sys
from pathlib import Path

import click

from . import __version__
from .config import default_map, read_config
from .errors import ConfigError, ViceError
from .metrics import error_timeseries, format_table, report_rows, write_report_csv
from .pipeline import (
    DEPTH_MODES,
    INIT_POLICIES,
    TrackConfig,
    evaluate as evaluate_run,
    load_inputs,
    manifest,
    parse_range,
    read_tracks,
    run_tracking,
    sweep_offsets,
    write_tracks,
)

EXIT_ERROR = 2


def _pixel(text):
    if text is None or isinstance(text, tuple):
        return text
    try:
        u, v = (float(x) for x in str(text).split(","))
    except ValueError:
        raise ConfigError(f"pixel must look like u,v, got {text!r}") from None
    return (u, v)


def _sources(text) -> tuple:
    if not text:
        return ()
    return tuple(s.strip() for s in str(text).split(",") if s.strip())


def _pose_files(text) -> tuple:
    out = []
    for item in _sources(text):
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise ConfigError(f"--pose-csv entries must look like name=path, got {item!r}")
        out.append((name.strip(), path.strip()))
    return tuple(out)


def _dataset_options(fn):
    opts = [
        click.option("--dataset", required=True, type=click.Path(), help="EuRoC-style dataset directory."),
        click.option("--annotations", default=None, type=click.Path(),
                     help="Annotation JSON (default: <dataset>/annotations.json)."),
        click.option("--fps", type=float, default=None, help="Resample frames to this rate."),
        click.option("--clip-seconds", type=float, default=None, help="Keep only the first N seconds."),
        click.option("--time-offset", type=float, default=0.0, show_default=True,
                     help="Read the pose of a frame at t + offset seconds."),
        click.option("--reference-source", default="mocap", show_default=True,
                     help="Pose stream giving the first-frame camera pose."),
        click.option("--pose-csv", default="", help="Extra pose streams as name=path[,name=path]."),
        click.option("--pose-convention", type=click.Choice(["absolute", "relative"]), default="absolute",
                     show_default=True, help="Convention of the --pose-csv files."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _track_options(fn):
    opts = [
        click.option("--sources", default="", help="Comma-separated pose streams (default: all)."),
        click.option("--depth", type=click.Choice(DEPTH_MODES), default="floor", show_default=True),
        click.option("--init", "init", type=click.Choice(INIT_POLICIES), default="annotations", show_default=True,
                     help="How reference points are (re)spawned."),
        click.option("--pixel", default=None, help="u,v for --init fixed."),
        click.option("--points", type=int, default=4, show_default=True, help="Reference points for --init random."),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--altitude", type=float, default=None, help="Camera height above the floor in metres."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _config(**kw) -> TrackConfig:
    return TrackConfig(
        dataset=kw["dataset"],
        annotations=kw.get("annotations"),
        sources=_sources(kw.get("sources")),
        depth=kw.get("depth", "floor"),
        init=kw.get("init", "annotations"),
        pixel=_pixel(kw.get("pixel")),
        points=kw.get("points", 4),
        seed=kw.get("seed", 0),
        fps=kw.get("fps"),
        clip_seconds=kw.get("clip_seconds"),
        time_offset=kw.get("time_offset", 0.0),
        altitude=kw.get("altitude"),
        reference_source=kw.get("reference_source", "mocap"),
        pose_files=_pose_files(kw.get("pose_csv")),
        pose_convention=kw.get("pose_convention", "absolute"),
    )


@click.group()
@click.version_option(__version__, prog_name="vice")
@click.option("--config", "config_path", type=click.Path(), default=None, help="Flat key = value config file.")
@click.pass_context
def cli(ctx, config_path):
    """Evaluate pose estimates by tracking image keypoints through them."""
    if config_path:
        ctx.default_map = default_map(read_config(config_path), ctx.command.commands)


@cli.command()
@click.option("--out", required=True, type=click.Path(), help="Output dataset directory.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--frames", "n_frames", type=int, default=300, show_default=True)
@click.option("--fps", type=float, default=10.0, show_default=True)
@click.option("--landmarks", type=int, default=8, show_default=True, help="Reference points visible at once.")
@click.option("--rotation-noise", type=float, default=0.0, show_default=True, help="Per-step rotation noise [rad].")
@click.option("--translation-noise", type=float, default=0.0, show_default=True, help="Per-step translation noise [m].")
@click.option("--time-offset", type=float, default=0.0, show_default=True,
              help="Onboard clock minus camera clock [s].")
@click.option("--extrinsic-noise", type=float, default=0.0, show_default=True,
              help="Rotation error of the published extrinsic [rad].")
@click.option("--images/--no-images", default=True, show_default=True, help="Render PNG frames.")
@click.option("--depth-images/--no-depth-images", default=False, show_default=True,
              help="Write per-frame depth images for --depth sensor.")
def synth(out, seed, n_frames, fps, landmarks, rotation_noise, translation_noise, time_offset, extrinsic_noise,
          images, depth_images):
    """Write the synthetic flat-floor dataset."""
    from .synth import NoiseSpec, SceneSpec, TrajectorySpec, synth_scene, write_dataset

    scene = synth_scene(
        seed,
        TrajectorySpec(n_frames=n_frames, fps=fps),
        SceneSpec(n_landmarks=landmarks),
        NoiseSpec(rotation_sigma=rotation_noise, translation_sigma=translation_noise,
                  time_offset_s=time_offset, extrinsic_sigma=extrinsic_noise),
    )
    write_dataset(scene, out, images=images, depth_images=depth_images)
    click.echo(f"wrote {len(scene.frames)} frames, {len(scene.annotations.tracks)} tracks to {out}")


@cli.command()
@_dataset_options
@_track_options
@click.option("--out", required=True, type=click.Path(), help="Output directory for track JSON files.")
def track(out, **kw):
    """Track reference points through each pose stream."""
    cfg = _config(**kw)
    inputs = load_inputs(cfg)
    tracks = run_tracking(cfg, inputs)
    written = write_tracks(out, tracks, manifest(cfg, inputs))
    click.echo(f"wrote {len(written)} tracks for {', '.join(tracks)} to {out}")


@cli.command()
@_dataset_options
@click.option("--tracks", "track_dir", required=True, type=click.Path(), help="Output directory of 'vice track'.")
@click.option("--out", default=None, type=click.Path(), help="Report CSV (default: <tracks>/report.csv).")
@click.option("--dataset-name", default="euroc", show_default=True)
@click.option("--sequence-name", default=None, help="Default: the sequence recorded by 'vice track'.")
@click.option("--degrees", is_flag=True, help="Report orientation errors in degrees.")
@click.option("--roe-stride", type=int, default=10, show_default=True)
@click.option("--timeseries", default=None, type=click.Path(), help="Also write per-frame errors (CSV).")
def evaluate(track_dir, out, dataset_name, sequence_name, degrees, roe_stride, timeseries, **kw):
    """Compare tracks with annotations and pose streams with each other."""
    run, tracks = read_tracks(track_dir)
    kw = {**_saved(run), **_explicit(kw)}
    cfg = _config(**kw)
    inputs = load_inputs(cfg, need_annotations=True)
    blocks = evaluate_run(cfg, tracks, inputs, roe_stride)
    n_points = len(inputs.annotations.tracks)
    rows = report_rows(dataset_name, sequence_name or run.get("sequence", ""), run.get("depth_mode", "-"),
                       blocks, n_points, degrees)
    out = Path(out) if out else Path(track_dir) / "report.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        write_report_csv(rows, fh)
    click.echo(format_table(f"{dataset_name} {sequence_name or run.get('sequence', '')}",
                            {run.get("depth_mode", "-"): blocks}, n_points, degrees), nl=False)
    if timeseries:
        src = "onboard" if "onboard" in tracks else next(iter(tracks))
        est = inputs.aligned.get(src)
        gt = inputs.aligned.get("mocap")
        series = error_timeseries(inputs.annotations, tracks[src], gt.poses if gt else None,
                                  est.poses if est else None, inputs.n_frames)
        Path(timeseries).write_text(series.to_csv(), encoding="utf-8")


def _saved(run: dict) -> dict:
    """Frame selection recorded by 'vice track', so later commands line up."""
    saved = run.get("config", {})
    keys = ("fps", "clip_seconds", "time_offset", "reference_source", "pose_convention")
    out = {k: saved[k] for k in keys if saved.get(k) is not None}
    if saved.get("pose_files"):
        out["pose_csv"] = ",".join(f"{n}={p}" for n, p in saved["pose_files"])
    return out


def _explicit(kw: dict) -> dict:
    """Drop options left at their click default so saved run settings apply."""
    ctx = click.get_current_context()
    out = {}
    for k, v in kw.items():
        src = ctx.get_parameter_source(k)
        if src is None or src.name != "DEFAULT":
            out[k] = v
    return out


@cli.command()
@_dataset_options
@click.option("--tracks", "track_dir", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path(), help="Directory for overlay PNGs.")
@click.option("--palette", type=click.Choice(["default", "colorblind"]), default="default", show_default=True)
@click.option("--radius", type=float, default=3.0, show_default=True, help="Dot radius in pixels.")
@click.option("--frames", "frame_range", default=None, help="a:b half-open frame range.")
def render(track_dir, out, palette, radius, frame_range, **kw):
    """Draw annotation (blue), mocap (red) and onboard (green) dots on frames."""
    from .render import render_sequence

    run, tracks = read_tracks(track_dir)
    kw = {**_saved(run), **_explicit(kw)}
    cfg = _config(**kw)
    inputs = load_inputs(cfg, need_annotations=False)
    rng = None
    if frame_range:
        try:
            a, b = (int(x) for x in frame_range.split(":"))
        except ValueError:
            raise ConfigError(f"--frames must look like a:b, got {frame_range!r}") from None
        rng = range(max(a, 0), min(b, inputs.n_frames))
    written = render_sequence(inputs.frames, tracks, inputs.annotations, out, palette, radius, rng)
    click.echo(f"wrote {len(written)} frames to {out}")


@cli.command()
@_dataset_options
@click.option("--tracks", "track_dir", default=None, type=click.Path(), help="Tracks to serve as overlays.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--token", default=None, envvar="VICE_TOKEN", help="Require this bearer token.")
def serve(track_dir, host, port, token, **kw):
    """Host the annotation session over HTTP."""
    import uvicorn

    from .service import create_app, load_session

    cfg = _config(**kw)
    inputs = load_inputs(cfg, need_annotations=False)
    tracks = read_tracks(track_dir)[1] if track_dir else {}
    name = manifest(cfg, inputs)["sequence"]
    session = load_session(name, inputs.frames, cfg.annotation_path(), tracks)
    uvicorn.run(create_app([session], token=token), host=host, port=port, log_level="info")


@cli.command("sweep-offset")
@_dataset_options
@click.option("--source", default="onboard", show_default=True, help="Pose stream to shift.")
@click.option("--range", "range_text", required=True, help="start:stop:step in seconds (inclusive).")
@click.option("--depth", type=click.Choice(DEPTH_MODES), default="floor", show_default=True)
@click.option("--altitude", type=float, default=None)
@click.option("--out", default=None, type=click.Path(), help="Also write offset,rmse2d CSV here.")
def sweep_offset(source, range_text, depth, altitude, out, **kw):
    """RMSE2D of one pose stream as a function of an injected time offset."""
    cfg = _config(**kw, depth=depth, altitude=altitude)
    results = sweep_offsets(cfg, source, parse_range(range_text))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["offset_s", "rmse2d_px"])
    for off, err in results:
        w.writerow([f"{off:.6g}", "N.A" if err is None else f"{err:.9g}"])
    if out:
        Path(out).write_text(buf.getvalue(), encoding="utf-8")
    click.echo(buf.getvalue(), nl=False)
    valid = [(e, o) for o, e in results if e is not None]
    if not valid:
        raise ConfigError("no offset in the range could be evaluated")
    best_err, best = min(valid)
    click.echo(f"best offset {best:.6g} s (rmse2d {best_err:.6g} px)")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="vice", standalone_mode=False)
    except ViceError as e:
        click.echo(f"{e.code}: {_one_line(e)}", err=True)
        return EXIT_ERROR
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.ClickException as e:
        click.echo(f"E_USAGE: {_one_line(e.format_message())}", err=True)
        return EXIT_ERROR
    except click.Abort:
        return 1
    except OSError as e:
        click.echo(f"E_IO: {_one_line(e)}", err=True)
        return EXIT_ERROR
    return 0


def _one_line(e) -> str:
    return " ".join(str(e).split())


if __name__ == "__main__":
    sys.exit(main())
