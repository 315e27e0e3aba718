"""Image captioning with Grad-CAM supervised attention."""
