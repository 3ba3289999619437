"""Category and attribute vocabulary shared by the scene generator and the
scripted oracle.

The co-occurrence table plays the role of commonsense knowledge: for each
goal category it lists likely neighbours, most likely first.
"""

GOAL_CATEGORIES = ("chair", "sofa", "bed", "toilet", "tv_monitor", "plant")

CO_OCCURRENCE = {
    "chair": ("table", "desk", "lamp", "rug", "shelf", "cabinet", "plant"),
    "sofa": ("tv_stand", "rug", "lamp", "table", "cushion", "shelf", "plant"),
    "bed": ("nightstand", "lamp", "wardrobe", "rug", "pillow", "desk", "mirror"),
    "toilet": ("sink", "bathtub", "mirror", "towel", "cabinet", "shower"),
    "tv_monitor": ("tv_stand", "sofa", "shelf", "speaker", "rug", "lamp"),
    "plant": ("window", "shelf", "table", "vase", "sofa", "lamp"),
}

# predefined base categories that are always tracked in memory
BASE_CATEGORIES = ("door", "table", "cabinet")

CONTEXT_CATEGORIES = tuple(sorted({c for v in CO_OCCURRENCE.values() for c in v}))

INTRINSIC_TOKENS = {
    "color": ("brown", "black", "white", "grey", "blue", "red", "green", "beige", "cream"),
    "material": ("wooden", "metal", "fabric", "leather", "plastic", "ceramic"),
    "shape": ("round", "square", "tall", "low", "curved", "slim"),
}

EXTRINSIC_TOKENS = (
    "carpet", "tiled_floor", "wooden_floor", "white_wall", "beige_wall", "window_light",
    "corner", "hallway", "floral_rug", "bright_room", "dim_room", "painting",
)

# tokens are namespaced so intrinsic and extrinsic evidence can be split
INTRINSIC_PREFIX = "int:"
EXTRINSIC_PREFIX = "ext:"

# goal descriptions for text-goal episodes; tokens are pre-tokenised
TEXT_GOALS = {
    "chair_brown_frame": {
        "text": ("The chair with a brown frame is positioned next to a table on a white "
                 "carpet with red and yellow floral patterns in a room with beige walls."),
        "category": "chair",
        "intrinsic": ("brown", "wooden"),
        "extrinsic": ("carpet", "floral_rug", "beige_wall", "table"),
    },
    "sofa_cream_loveseat": {
        "text": ("The sofa is a plush, cream-colored loveseat with a soft, fluffy texture, "
                 "topped with a cozy throw blanket in a bright, airy room."),
        "category": "sofa",
        "intrinsic": ("cream", "fabric"),
        "extrinsic": ("bright_room",),
    },
    "plant_striped_vase": {
        "text": ("The plant in a blue and white striped vase containing green foliage stands "
                 "in a hallway with white walls and a yellow floor."),
        "category": "plant",
        "intrinsic": ("blue", "white", "green"),
        "extrinsic": ("hallway", "white_wall"),
    },
}
