"""Published localization tables, transcribed by hand: (object, truth, detected, error cm)."""

SCENE1 = [
    ("Target 1", (-1.42, -1.39), (-1.27, -1.25), (15, 14)),
    ("Target 2", (1.43, 0.13), (1.34, 0.18), (9, 5)),
    ("Target 3", (-1.76, 1.82), (-1.60, 1.73), (16, 9)),
    ("Obstacle 1", (-0.41, -0.72), (-0.28, -0.65), (13, 7)),
    ("Obstacle 2", (-0.85, 1.31), (-0.66, 1.20), (19, 11)),
]

SCENE2 = [
    ("Target 1", (-1.42, -1.39), (-1.42, -1.38), (0, 1)),
    ("Target 2", (1.56, -1.43), (1.44, -1.25), (12, 18)),
    ("Target 3", (1.73, 1.70), (1.50, 1.60), (23, 10)),
    ("Target 4", (-1.76, 1.82), (-1.55, 1.70), (21, 12)),
    ("Obstacle 1", (-1.29, 0.28), (-1.16, 0.26), (13, 2)),
    ("Obstacle 2", (0.08, 1.57), (0.14, 1.38), (6, 19)),
    ("Obstacle 3", (-0.15, -1.35), (-0.03, -1.25), (12, 10)),
]

TABLES = {"scene1": SCENE1, "scene2": SCENE2}

RECORDED_TIMES = [(28.0, 40.0, 57.0), (30.0, 48.0, 72.0)]
