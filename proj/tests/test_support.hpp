#pragma once

#include <filesystem>
#include <string>

inline std::filesystem::path data_dir() { return LEXRAG_DATA_DIR; }
inline std::filesystem::path fixtures_dir() { return LEXRAG_FIXTURES_DIR; }
