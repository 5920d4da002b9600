# src/core_services/glimpse_viz_service.py

import os

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from core_services.coattention import attention_mass
from core_services.glimpse_attention import GlimpseRecord
from utils import storage_service
from utils.exceptions import ContractError
from utils.image_utils import upscale

WINDOW_COLOUR = (255, 40, 40)
CENTRE_COLOUR = (255, 230, 0)


class GlimpseVizService:
    """Renders comparator trajectories and co-attention mass over the compared images."""

    def __init__(self, display_side: int = 224):
        self.display_side = display_side
        try:
            self.font = ImageFont.load_default()
        except IOError:
            self.font = None
        print("✅ Glimpse Viz Service initialized.")

    def _window_box(self, record: GlimpseRecord, grid_side: int) -> tuple[float, float, float, float]:
        cell = self.display_side / grid_side
        x0, y0, x1, y1 = record.window()
        return x0 * cell, y0 * cell, (x1 + 1) * cell - 1, (y1 + 1) * cell - 1

    def draw_step(self, image: np.ndarray, record: GlimpseRecord, step: int, stream: str) -> Image.Image:
        canvas = upscale(image, self.display_side)
        draw = ImageDraw.Draw(canvas)
        draw.rectangle(self._window_box(record, record.A), outline=WINDOW_COLOUR, width=2)

        cell = self.display_side / record.A
        cx = (float(np.reshape(record.g_x, -1)[0]) + 0.5) * cell
        cy = (float(np.reshape(record.g_y, -1)[0]) + 0.5) * cell
        draw.ellipse((cx - 3, cy - 3, cx + 3, cy + 3), fill=CENTRE_COLOUR)
        draw.text((4, 4), f"t={step + 1} ({stream})", fill="white", font=self.font)
        return canvas

    def create_overlays(self, model, image_a: np.ndarray, image_b: np.ndarray, output_dir: str,
                        coattention_maps: bool = False) -> list[str]:
        """One ``step_TT_{a|b}.png`` per recurrent step, plus the trajectory as JSON."""
        comparison, pair = model.compare_pair(image_a, image_b)
        if comparison is None:
            raise ContractError("glimpse overlays need the comparator fusion head (head.fusion = 'dcc')")

        os.makedirs(output_dir, exist_ok=True)
        paths = []
        for step, record in enumerate(comparison.trajectory):
            stream = "a" if step % 2 == 0 else "b"
            canvas = self.draw_step(image_a if stream == "a" else image_b, record, step, stream)
            path = os.path.join(output_dir, f"step_{step:02d}_{stream}.png")
            canvas.save(path, "PNG")
            paths.append(path)

        storage_service.save_json(os.path.join(output_dir, "trajectory.json"), [
            {"step": step, "image": "a" if step % 2 == 0 else "b",
             "g_x": float(np.reshape(r.g_x, -1)[0]), "g_y": float(np.reshape(r.g_y, -1)[0]),
             "delta": float(np.reshape(r.delta, -1)[0]), "gamma": float(np.reshape(r.gamma, -1)[0]),
             "window": list(r.window())}
            for step, r in enumerate(comparison.trajectory)
        ])
        if coattention_maps:
            paths.extend(self.create_coattention_maps(pair, image_a, image_b, output_dir))
        print(f"✅ {len(paths)} glimpse overlay(s) written to '{output_dir}'.")
        return paths

    def heat_overlay(self, image: np.ndarray, mass: np.ndarray) -> Image.Image:
        side = int(round(np.sqrt(mass.size)))
        grid = mass.reshape(side, side)
        span = grid.max() - grid.min()
        grid = (grid - grid.min()) / span if span > 0 else np.zeros_like(grid)
        heat = np.zeros((side, side, 3))
        heat[..., 0] = grid
        heat[..., 1] = 0.25 * grid
        base = upscale(image, self.display_side)
        return Image.blend(base, upscale(heat, self.display_side), 0.5)

    def create_coattention_maps(self, pair, image_a: np.ndarray, image_b: np.ndarray, output_dir: str) -> list[str]:
        """Where each image is looked at from the other: column sums of the co-attention weights."""
        mass_a, mass_b = attention_mass(pair)
        paths = []
        for name, image, mass in (("a", image_a, mass_a), ("b", image_b, mass_b)):
            path = os.path.join(output_dir, f"coattention_{name}.png")
            self.heat_overlay(image, np.reshape(mass, -1)).save(path, "PNG")
            paths.append(path)
        return paths
