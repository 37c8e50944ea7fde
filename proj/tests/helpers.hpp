#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

namespace testutil {

/// Unique scratch directory, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path() / "mulearn-tests";
        std::filesystem::create_directories(base);
        for (int i = 0;; ++i) {
            auto candidate = base / (tag + "-" + std::to_string(i));
            if (!std::filesystem::exists(candidate)) {
                std::filesystem::create_directories(candidate);
                path_ = candidate;
                break;
            }
        }
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace testutil
