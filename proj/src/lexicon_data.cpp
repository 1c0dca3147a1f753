// SPDX-License-Identifier: Apache-2.0
// Embedded word lists and benchmark tables.
#include "dos/prompts.hpp"

namespace dos {

const Lexicon& Lexicon::standard() {
  static const Lexicon lexicon{
      {
          "round", "oval", "square", "rectangular", "triangular", "spherical", "cylindrical",
          "conical", "flat", "elongated", "pointed", "curved", "ring-shaped", "disc-shaped",
          "irregular", "spiral", "star-shaped", "jagged", "boxy", "stocky", "smooth", "rough",
          "bumpy", "grainy", "granular", "fuzzy", "hairy", "woolly", "leathery", "scaly",
          "feathery", "slimy", "wrinkled", "shaggy", "shiny", "matte", "porous", "spongy",
          "striped", "spotted", "patterned", "rubbery"
      },
      {
          "in a forest", "in a desert", "on a mountain", "on a beach", "in a grassland",
          "in the Arctic", "in the savanna", "on the ocean surface", "underwater", "in a river",
          "in a lake", "in a coral reef", "in a cave", "in a city street",
          "in a suburban neighborhood", "in a farm field", "at a construction site",
          "at a stadium", "in a parking lot", "on a road", "on a railway track", "on a boat deck",
          "on an airport runway", "in the sky", "in space", "in a living room", "in a kitchen",
          "in a bedroom", "in a bathroom", "in an office", "in a classroom", "in a laboratory",
          "in a factory", "in a warehouse", "in a shopping mall", "in a grocery store"
      },
  };
  return lexicon;
}

namespace {

using Tuples = std::vector<std::vector<std::string>>;

const Tuples kSimilarShapes = {
    {"basketball", "orange"}, {"balloon", "ball"}, {"coin", "button"}, {"mushroom", "umbrella"},
    {"soap", "eraser"}, {"bicycle", "motorcycle"}, {"plate", "frisbee"}, {"crayon", "candle"},
    {"soda can", "battery"}, {"golf club", "hockey stick"}, {"tent", "pyramid"},
    {"traffic cone", "party hat"}, {"carrot", "ice cream cone"}, {"snake", "rope"},
    {"leaf", "feather"}, {"horseshoe", "magnet"}, {"soccer ball", "globe"},
    {"light bulb", "onion"}, {"jellyfish", "parachute"}, {"butterfly", "bow tie"},
    {"tennis ball", "lime"}, {"hedgehog", "hairbrush"}, {"coin", "clock"},
    {"remote control", "chocolate bar"}, {"comb", "rake"}, {"jellybean", "kidney bean"},
    {"matchstick", "pencil"}, {"marker", "lipstick"}, {"donut", "ring"}, {"pebble", "almond"},
    {"jellyfish", "octopus"}, {"penguin", "bowling pin"}, {"donut", "compact disc"},
    {"cabbage", "balloon"}, {"pencil", "straw"}, {"broom", "spear"},
    {"screwdriver", "paintbrush"}, {"onion", "egg"}, {"fork", "trident"}, {"shovel", "oar"},
    {"battery", "bullet"}, {"coin", "medal"}, {"hourglass", "dumbbell"},
    {"car tire", "lifebuoy"}, {"paperclip", "pretzel"}, {"rocket", "carrot"},
    {"donut", "lifebuoy"}, {"clock", "wheel"}, {"balloon", "bubble"}, {"book", "brick"}
};

const Tuples kSimilarTextures = {
    {"zebra", "referee shirt"}, {"leopard", "giraffe"}, {"diamond", "ice cube"},
    {"belt", "wallet"}, {"waffle", "honeycomb"}, {"coral", "sponge"}, {"popcorn", "cauliflower"},
    {"sandcastle", "sugar cube"}, {"loaf of bread", "cork"}, {"cactus", "pineapple"},
    {"marble", "ice cube"}, {"sock", "mitten"}, {"fur coat", "moss patch"}, {"soap", "candle"},
    {"key", "spoon"}, {"strawberry", "golf ball"}, {"jellyfish", "plastic bag"},
    {"kiwi", "coconut"}, {"soccer ball", "turtle shell"}, {"cactus", "sea urchin"},
    {"crab", "shrimp"}, {"bottle", "jar"}, {"fork", "spoon"}, {"sheep", "cotton ball"},
    {"kiwi bird", "coconut"}, {"tarantula", "carpet"}, {"crocodile", "leather handbag"},
    {"tiger", "clownfish"}, {"panda", "soccer ball"}, {"penguin", "tuxedo"},
    {"giraffe", "cheetah"}, {"mirror", "chrome ball"}, {"coin", "spoon"}, {"carpet", "rabbit"},
    {"mink coat", "peach"}, {"leopard", "dalmatian"}, {"teddy bear", "peach"},
    {"fish", "sequined dress"}, {"sponge", "pumice stone"}, {"leather shoe", "basketball"},
    {"cherry", "grape"}, {"olive", "grape"}, {"wine glass", "light bulb"},
    {"ladybug", "dalmatian"}, {"cheetah", "ladybug"}, {"pangolin", "artichoke"},
    {"lobster", "shrimp"}, {"sponge", "swiss cheese"}, {"brick", "sandpaper"}, {"cat", "rabbit"}
};

const Tuples kDissimilarBackgroundBiases = {
    {"beach ball", "snowball"}, {"coconut", "ice cube"}, {"sandcastle", "igloo"},
    {"kayak", "snowboard"}, {"camel", "seahorse"}, {"cow", "whale"}, {"goat", "octopus"},
    {"chicken", "fish"}, {"chameleon", "seahorse"}, {"horse", "seal"}, {"chameleon", "penguin"},
    {"rabbit", "seal"}, {"pineapple", "coral"}, {"apple", "clam"}, {"coconut", "starfish"},
    {"lettuce", "seaweed"}, {"cauliflower", "seahorse"}, {"potato", "oyster"}, {"lion", "whale"},
    {"camel", "polar bear"}, {"elephant", "shark"}, {"cactus", "penguin"}, {"penguin", "camel"},
    {"fish", "bicycle"}, {"crocodile", "eagle"}, {"deer", "shark"}, {"rabbit", "crab"},
    {"eagle", "seahorse"}, {"igloo", "desert tent"}, {"snowman", "sandcastle"},
    {"ice skate", "surfboard"}, {"crocodile", "camel"}, {"koala", "dolphin"}, {"bear", "crab"},
    {"cat", "jellyfish"}, {"giraffe", "seahorse"}, {"sofa", "tent"}, {"tractor", "sailboat"},
    {"boat", "car"}, {"cactus", "seahorse"}, {"cactus", "coral"}, {"strawberry", "fish"},
    {"parrot", "penguin"}, {"tank", "canoe"}, {"polar bear", "kangaroo"}, {"deer", "sea turtle"},
    {"monkey", "octopus"}, {"carrot", "seaweed"}, {"carrot", "coral"}, {"dog", "dolphin"}
};

// 25 three-object tuples followed by 25 four-object tuples.
const Tuples kManyObjects = {
    {"penguin", "cat", "elephant"}, {"panda", "frog", "horse"}, {"bear", "frog", "fish"},
    {"lion", "fish", "chicken"}, {"cat", "horse", "gorilla"}, {"chicken", "bear", "rabbit"},
    {"gorilla", "horse", "bird"}, {"cat", "fish", "turtle"}, {"frog", "monkey", "fish"},
    {"panda", "gorilla", "bird"}, {"dog", "rabbit", "lion"}, {"cow", "panda", "turtle"},
    {"chicken", "bear", "monkey"}, {"rabbit", "fish", "monkey"}, {"bear", "fish", "bird"},
    {"cow", "fish", "cat"}, {"fish", "bear", "cat"}, {"chicken", "bird", "bear"},
    {"chicken", "lion", "cat"}, {"chicken", "bear", "penguin"}, {"dog", "horse", "bird"},
    {"monkey", "turtle", "chicken"}, {"cow", "gorilla", "bird"}, {"lion", "turtle", "monkey"},
    {"horse", "frog", "fish"},
    {"bear", "horse", "turtle", "frog"}, {"chicken", "cat", "bear", "lion"},
    {"bird", "cow", "horse", "turtle"}, {"turtle", "fish", "horse", "dog"},
    {"penguin", "cat", "cow", "gorilla"}, {"fish", "horse", "gorilla", "penguin"},
    {"cow", "chicken", "monkey", "turtle"}, {"turtle", "horse", "cow", "gorilla"},
    {"bird", "cat", "fish", "cow"}, {"rabbit", "turtle", "cat", "penguin"},
    {"bird", "cat", "dog", "elephant"}, {"fish", "turtle", "chicken", "frog"},
    {"lion", "frog", "rabbit", "fish"}, {"frog", "chicken", "rabbit", "fish"},
    {"chicken", "frog", "monkey", "dog"}, {"chicken", "elephant", "bird", "frog"},
    {"cat", "panda", "horse", "bear"}, {"turtle", "cat", "frog", "fish"},
    {"cat", "cow", "horse", "monkey"}, {"cow", "chicken", "turtle", "rabbit"},
    {"fish", "bird", "bear", "turtle"}, {"cat", "lion", "rabbit", "dog"},
    {"bear", "cat", "penguin", "chicken"}, {"panda", "fish", "chicken", "monkey"},
    {"panda", "lion", "frog", "chicken"}
};

}  // namespace

const std::vector<std::vector<std::string>>& benchmark_tuples(Benchmark b) {
  switch (b) {
    case Benchmark::similar_shapes: return kSimilarShapes;
    case Benchmark::similar_textures: return kSimilarTextures;
    case Benchmark::dissimilar_background_biases: return kDissimilarBackgroundBiases;
    case Benchmark::many_objects: return kManyObjects;
  }
  throw Error(ErrorCode::UnknownBenchmark, "unknown benchmark");
}

const std::vector<std::string>& coco_classes() {
  static const std::vector<std::string> classes = {
      "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat",
      "traffic light", "fire hydrant", "stop sign", "parking meter", "bench", "bird", "cat", "dog",
      "horse", "sheep", "cow", "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella",
      "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard", "sports ball", "kite",
      "baseball bat", "baseball glove", "skateboard", "surfboard", "tennis racket", "bottle",
      "wine glass", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple", "sandwich",
      "orange", "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair", "couch",
      "potted plant", "bed", "dining table", "toilet", "tv", "laptop", "mouse", "remote",
      "keyboard", "cell phone", "microwave", "oven", "toaster", "sink", "refrigerator", "book",
      "clock", "vase", "scissors", "teddy bear", "hair drier", "toothbrush"
  };
  return classes;
}

}  // namespace dos
