# orchestration/main_orchestrator.py
import os
import threading

import numpy as np

from config import RUNS_PATH, RunConfig, apply_overrides, config_from_dict, load_run_config
from core_services.dcc_model import DCCModel
from core_services.glimpse_viz_service import GlimpseVizService
from data_services.dataset import IdentityDataset
from data_services.directory_loader import load_directory, write_manifest
from data_services.synth_data_service import build_dataset, export_dataset, render_identity_views
from orchestration.evaluation import evaluate, split_probe_gallery
from orchestration.gradcheck import run_gradcheck
from orchestration.training_engine import Checkpoint, TrainingEngine
from utils.exceptions import (
    ConfigError, ContractError, DataError, FormatError, InterruptedException, NumericalError, ProtocolError,
    ShapeError, TrainingError,
)
from utils.image_utils import load_image

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ABORT = 3

_USAGE_ERRORS = (ConfigError, ShapeError, FormatError, ProtocolError, DataError, ContractError)
_ABORT_ERRORS = (TrainingError, NumericalError)


class MainOrchestrator:
    def __init__(self, show_progress: bool = True):
        print("Initializing the Main Orchestrator...")
        self.kill_switch = threading.Event()
        self.show_progress = show_progress
        self.viz_service = GlimpseVizService()
        print("✅ Main Orchestrator initialized.")

    def trigger_kill_switch(self):
        print("ORCHESTRATOR: Kill switch triggered!")
        self.kill_switch.set()

    def reset_kill_switch(self):
        self.kill_switch.clear()

    # --- shared plumbing ---------------------------------------------------------

    def _guarded(self, label: str, action) -> dict:
        self.reset_kill_switch()
        try:
            result = action()
            result.setdefault("success", True)
            result.setdefault("exit_code", EXIT_OK)
            return result
        except InterruptedException as e:
            return {"success": False, "message": f"Operation cancelled by user: {e}", "exit_code": EXIT_ABORT}
        except _USAGE_ERRORS as e:
            print(f"❌ {label}: {e}")
            result = {"success": False, "message": str(e), "exit_code": EXIT_USAGE}
            if isinstance(e, ConfigError) and e.key:
                result["key"] = e.key
            return result
        except _ABORT_ERRORS as e:
            print(f"❌ {label} aborted: {e}")
            result = {"success": False, "message": str(e), "exit_code": EXIT_ABORT}
            if isinstance(e, TrainingError):
                result["checkpoint"] = e.checkpoint_path
            return result

    @staticmethod
    def load_config(config_path: str | None, overrides=()) -> RunConfig:
        return load_run_config(config_path, overrides)

    @staticmethod
    def _dataset(cfg: RunConfig, data_dir: str | None, seed: int, unseen: bool = False) -> IdentityDataset:
        """A directory dataset, or synthetic identities (shifted past the training ids when ``unseen``)."""
        if data_dir:
            return load_directory(data_dir, cfg.encoder.input_side, features=cfg.encoder.mode == "file-load")
        if cfg.encoder.mode == "file-load":
            raise ConfigError("file-load encoders need a feature directory (--data)", key="encoder.mode")
        data = cfg.data
        if unseen:
            data = data.model_copy(update={"id_offset": data.id_offset + data.ids})
        return build_dataset(data, seed)

    @staticmethod
    def _load_model(checkpoint_path: str, config_path: str | None, overrides) -> tuple[DCCModel, Checkpoint]:
        checkpoint = Checkpoint.load(checkpoint_path)
        if config_path:
            cfg = load_run_config(config_path, overrides)
        elif checkpoint.config:
            cfg = config_from_dict(apply_overrides(checkpoint.config, overrides))
        else:
            raise ConfigError(f"checkpoint {checkpoint_path} carries no config; pass --config")
        model = DCCModel.initialize(cfg, np.random.default_rng(0))
        model.load_state_dict(checkpoint.parameters)
        return model, checkpoint

    # --- commands ------------------------------------------------------------------

    def run_training(self, config_path=None, overrides=(), data_dir=None, run_dir=None, resume=None) -> dict:
        def action():
            cfg = self.load_config(config_path, overrides)
            out = run_dir or os.path.join(RUNS_PATH, f"seed_{cfg.train.seed}")
            dataset = self._dataset(cfg, data_dir, cfg.train.seed)
            TrainingEngine.check_dataset(cfg, dataset)
            os.makedirs(out, exist_ok=True)
            write_manifest(dataset, os.path.join(out, "dataset_manifest.json"))
            engine = TrainingEngine(cfg, dataset, out, kill_switch=self.kill_switch,
                                    show_progress=self.show_progress)
            if resume:
                engine.resume(resume)
            result = engine.train()
            return {
                "message": f"Training finished after {result.steps} steps "
                           f"(loss {result.final_loss:.4f}, episode accuracy {result.final_accuracy:.3f}).",
                "checkpoint": result.checkpoint_path,
                "metrics": result.metrics_path,
                "steps": result.steps,
                "final_loss": result.final_loss,
                "final_accuracy": result.final_accuracy,
                "stopped_early": result.stopped_early,
            }
        return self._guarded("Training", action)

    def run_evaluation(self, checkpoint_path, config_path=None, overrides=(), data_dir=None,
                       trials=None, output_path=None) -> dict:
        def action():
            model, _ = self._load_model(checkpoint_path, config_path, overrides)
            cfg = model.cfg
            dataset = self._dataset(cfg, data_dir, cfg.train.seed, unseen=True)
            probe, gallery = split_probe_gallery(dataset, cfg.eval.probe_camera)
            result = evaluate(model, probe, gallery, trials=trials or cfg.eval.trials, seed=cfg.train.seed,
                              ranks=cfg.eval.ranks, symmetric=cfg.eval.symmetric)
            report = result.report(title=cfg.head.fusion.upper())
            print(report)
            out = output_path or os.path.join(os.path.dirname(os.path.abspath(checkpoint_path)), "eval_result.json")
            result.save(out)
            return {"message": report, "result": result.to_dict(), "output": out}
        return self._guarded("Evaluation", action)

    def run_gradcheck(self, blocks=None, epsilon=1e-6, seed=0, perturb_weight=None, corrupt=1.0) -> dict:
        def action():
            report = run_gradcheck(blocks=blocks, epsilon=epsilon, seed=seed,
                                   perturb_weight=perturb_weight, corrupt=corrupt)
            lines = report.lines()
            for line in lines:
                print(line)
            return {
                "success": report.passed,
                "exit_code": EXIT_OK if report.passed else EXIT_ABORT,
                "message": "All gradient checks passed." if report.passed else "Gradient check failed.",
                "blocks": {b.name: b.max_error for b in report.blocks},
            }
        return self._guarded("Gradient check", action)

    def run_glimpse_viz(self, checkpoint_path, output_dir, image_a=None, image_b=None, config_path=None,
                        overrides=(), coattention_maps=False) -> dict:
        def action():
            model, _ = self._load_model(checkpoint_path, config_path, overrides)
            cfg = model.cfg
            if cfg.encoder.mode != "tiny-stem":
                raise ConfigError("glimpse overlays need pixel images (encoder.mode = 'tiny-stem')",
                                  key="encoder.mode")
            if image_a and image_b:
                pixels_a = load_image(image_a, cfg.encoder.input_side)
                pixels_b = load_image(image_b, cfg.encoder.input_side)
            elif image_a or image_b:
                raise ContractError("pass both --image-a and --image-b, or neither for a synthetic pair")
            else:
                views = render_identity_views(cfg.data, cfg.train.seed, cfg.data.id_offset)
                pixels_a, pixels_b = views[0][1], views[-1][1]
            paths = self.viz_service.create_overlays(model, pixels_a, pixels_b, output_dir,
                                                     coattention_maps=coattention_maps)
            return {"message": f"Wrote {len(paths)} file(s) to {output_dir}.", "files": paths}
        return self._guarded("Glimpse visualization", action)

    def run_synth_data(self, output_dir, config_path=None, overrides=(), image_format="ppm") -> dict:
        def action():
            cfg = self.load_config(config_path, overrides)
            dataset = build_dataset(cfg.data, cfg.train.seed)
            paths = export_dataset(dataset, output_dir, image_format=image_format)
            return {"message": f"Wrote {len(paths)} images of {len(dataset.identities)} identities.",
                    "files": len(paths), "identities": len(dataset.identities)}
        return self._guarded("Synthetic data", action)
