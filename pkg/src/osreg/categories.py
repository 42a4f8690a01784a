"""Remote-sensing category vocabulary for the text feature library.

``BASIC_CATEGORIES`` holds 37 common scene and land-cover names;
``EXPANDED_CATEGORIES`` extends them to 224 names covering natural
scenes, artificial structures, and common land-cover objects.  The
basic list is always a prefix of the expanded list.
"""

BASIC_CATEGORIES = (
    "forest",
    "river",
    "lake",
    "ocean",
    "mountain",
    "desert",
    "beach",
    "island",
    "wetland",
    "grassland",
    "farmland",
    "orchard",
    "urban area",
    "residential area",
    "industrial area",
    "commercial area",
    "village",
    "road",
    "highway",
    "railway",
    "bridge",
    "airport",
    "harbor",
    "dam",
    "power plant",
    "stadium",
    "school",
    "hospital",
    "parking lot",
    "building",
    "factory",
    "storage tank",
    "runway",
    "intersection",
    "roundabout",
    "baseball field",
    "golf course",
)

_EXTRA_CATEGORIES = (
    "meadow",
    "pasture",
    "shrubland",
    "savanna",
    "tundra",
    "glacier",
    "snowfield",
    "volcano",
    "canyon",
    "valley",
    "hill",
    "plateau",
    "cliff",
    "sand dune",
    "oasis",
    "salt flat",
    "lagoon",
    "estuary",
    "river delta",
    "bay",
    "strait",
    "coral reef",
    "atoll",
    "pond",
    "reservoir",
    "creek",
    "waterfall",
    "floodplain",
    "marsh",
    "swamp",
    "bog",
    "mangrove",
    "rice paddy",
    "wheat field",
    "corn field",
    "vineyard",
    "tea plantation",
    "oil palm plantation",
    "greenhouse",
    "barn",
    "grain silo",
    "windmill",
    "wind farm",
    "solar farm",
    "oil field",
    "oil rig",
    "refinery",
    "open-pit mine",
    "quarry",
    "gravel pit",
    "landfill",
    "sewage treatment plant",
    "electrical substation",
    "transmission line",
    "canal",
    "levee",
    "breakwater",
    "pier",
    "jetty",
    "dock",
    "shipyard",
    "marina",
    "ferry terminal",
    "lighthouse",
    "container terminal",
    "fishing village",
    "coastal town",
    "suburb",
    "downtown",
    "apartment complex",
    "housing estate",
    "informal settlement",
    "university campus",
    "temple",
    "church",
    "mosque",
    "castle",
    "fortress",
    "monument",
    "museum",
    "shopping mall",
    "open-air market",
    "hotel",
    "seaside resort",
    "campground",
    "amusement park",
    "zoo",
    "botanical garden",
    "city park",
    "plaza",
    "cemetery",
    "tennis court",
    "basketball court",
    "soccer field",
    "athletic track",
    "swimming pool",
    "ski resort",
    "racetrack",
    "motorway junction",
    "overpass",
    "tunnel entrance",
    "toll station",
    "bus station",
    "train station",
    "freight yard",
    "helipad",
    "air base",
    "military base",
    "radar station",
    "observatory",
    "weather station",
    "antenna array",
    "communication tower",
    "water tower",
    "cooling tower",
    "nuclear power plant",
    "hydroelectric dam",
    "warehouse",
    "distribution center",
    "construction site",
    "sawmill",
    "steel mill",
    "cement plant",
    "chemical plant",
    "brewery",
    "dairy farm",
    "poultry farm",
    "cattle ranch",
    "horse ranch",
    "fish farm",
    "aquaculture pond",
    "salt evaporation pond",
    "sunflower field",
    "cotton field",
    "sugarcane field",
    "soybean field",
    "olive grove",
    "apple orchard",
    "citrus grove",
    "banana plantation",
    "coffee plantation",
    "rubber plantation",
    "bamboo forest",
    "pine forest",
    "rainforest",
    "mixed woodland",
    "clearcut area",
    "burned area",
    "flooded area",
    "snow-covered field",
    "frozen lake",
    "sea ice",
    "iceberg",
    "mudflat",
    "tidal flat",
    "gravel riverbed",
    "dry riverbed",
    "alluvial fan",
    "badlands",
    "karst landscape",
    "terraced field",
    "irrigation channel",
    "center-pivot field",
    "hedgerow",
    "windbreak",
    "fallow field",
    "paddy terraces",
    "greenhouse complex",
    "logging road",
    "mountain trail",
    "dirt road",
    "coastal road",
    "railway junction",
    "metro depot",
    "bus depot",
    "truck stop",
    "rest area",
    "border checkpoint",
    "cargo airport",
    "regional airport",
    "seaplane base",
    "golf driving range",
    "cricket ground",
    "rugby field",
    "velodrome",
    "shooting range",
    "equestrian center",
)

EXPANDED_CATEGORIES = BASIC_CATEGORIES + _EXTRA_CATEGORIES

if len(EXPANDED_CATEGORIES) != 224 or len(set(EXPANDED_CATEGORIES)) != 224:
    raise AssertionError(
        f"category vocabulary must hold 224 unique names, got {len(EXPANDED_CATEGORIES)} "
        f"({len(set(EXPANDED_CATEGORIES))} unique)"
    )
