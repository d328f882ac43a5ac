#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "l2mac/messages.hpp"

namespace l2mac {

/// File name that, passed to delete_files, clears the whole store.
inline constexpr std::string_view kDeleteAllSentinel = "-1";

struct FileWrite
{
    std::string path;
    std::string content;
};

/// Normalizes a store-relative path ("./a//b.py" -> "a/b.py"). Throws
/// PathViolation for empty, absolute, backslashed, drive-lettered or
/// parent-traversing paths.
std::string normalize_path(std::string_view raw);

/// True iff `text` is well-formed UTF-8 without NUL bytes.
bool is_text_content(std::string_view text);

/// The external file memory. Entries are the source of truth; when a mirror
/// root is configured every mutation is written through to disk before the
/// call returns.
class FileStore
{
public:
    explicit FileStore(const Tokenizer& tokenizer, std::optional<std::filesystem::path> mirror_root = std::nullopt);

    /// Loads every UTF-8 file under `root` (skipping dot-directories and
    /// __pycache__) and keeps `root` as the mirror.
    static FileStore open_directory(const Tokenizer& tokenizer, const std::filesystem::path& root);

    const std::map<std::string, std::string>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    bool contains(std::string_view path) const;
    std::optional<std::string> read(std::string_view path) const;
    const std::optional<std::filesystem::path>& mirror_root() const noexcept { return mirror_root_; }
    const Tokenizer& tokenizer() const noexcept { return *tokenizer_; }

    /// Breadth-first over the directory tree, lexicographic within a directory.
    std::vector<std::string> list_files() const;

    /// "path\n```\ncontent\n```" blocks in request order; unknown paths are
    /// reported inline and do not abort the rest.
    Message view_files(const std::vector<std::string>& paths) const;

    /// Whole-file create/overwrite. The batch is validated first and applied
    /// all-or-nothing; violations come back as an error status in the
    /// response. `max_file_tokens` enforces the half-margin size rule.
    Message write_files(const std::vector<FileWrite>& files, std::optional<std::size_t> max_file_tokens = std::nullopt);

    /// Deletes named files; the "-1" sentinel clears the store.
    Message delete_files(const std::vector<std::string>& paths);

    /// Throwing single-file write used by write_files and loaders.
    void put(std::string_view path, std::string content, std::optional<std::size_t> max_file_tokens = std::nullopt);

    /// Rewrites the disk mirror so it holds exactly the store's entries,
    /// removing anything a sandboxed process left behind.
    void sync_mirror() const;

    /// SHA-256 over (path, content) pairs in path order.
    std::string content_hash() const;

private:
    void validate_write(const std::string& path, const std::string& content,
                        std::optional<std::size_t> max_file_tokens) const;
    void write_through(const std::string& path, const std::string& content) const;
    void remove_through(const std::string& path) const;
    void clear_mirror() const;

    const Tokenizer* tokenizer_;
    std::optional<std::filesystem::path> mirror_root_;
    std::map<std::string, std::string> entries_;
};

} // namespace l2mac
