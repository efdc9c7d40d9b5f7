#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace cxdi {

/// SHA-1 of "blob <size>\0" + bytes, the identifier git assigns to file contents.
std::string git_blob_sha1(std::string_view bytes);
std::string file_blob_sha1(const std::filesystem::path& path);

}  // namespace cxdi
