#pragma once

#include <optional>
#include <string>

#include "promptlab/bounds.hpp"
#include "promptlab/cot.hpp"
#include "promptlab/world.hpp"

namespace promptlab {

// A world file may carry a "cot" section describing the inference-time
// composite prior and step worlds.
struct WorldFile {
  World world;
  std::optional<CotWorld> cot;
};

// Config errors carry the JSON path of the offending field.
WorldFile parse_world_file(const std::string& text, const std::string& origin = "world");
WorldFile load_world_file(const std::string& path);

struct PromptFile {
  std::string kind;  // "icl" or "cot"
  IclConfig icl;
  CotConfig cot;
  int y_len = 1;        // response length when no explicit "y" list is given
  bool y_given = false;
};

// Token references may be names or ids. Missing response sets are filled
// exhaustively (capped at y_max).
PromptFile parse_prompt_file(const std::string& text, const World& w, std::size_t y_max = 10000,
                             const std::string& origin = "prompt");
PromptFile load_prompt_file(const std::string& path, const World& w, std::size_t y_max = 10000);

std::string read_text_file(const std::string& path);

}  // namespace promptlab
