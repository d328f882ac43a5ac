#include "l2mac/file_store.hpp"

#include <deque>
#include <fstream>
#include <set>
#include <sstream>
#include <system_error>

#include <nlohmann/json.hpp>

#include "l2mac/digest.hpp"
#include "l2mac/errors.hpp"

namespace l2mac {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_segments(std::string_view path)
{
    std::vector<std::string> segments;
    std::size_t start = 0;
    while (start <= path.size())
    {
        auto end = path.find('/', start);
        if (end == std::string_view::npos)
            end = path.size();
        segments.emplace_back(path.substr(start, end - start));
        start = end + 1;
    }
    return segments;
}

bool is_skipped_directory(const fs::path& name)
{
    const auto s = name.string();
    return s == "__pycache__" || (!s.empty() && s.front() == '.');
}

struct DirNode
{
    // std::map keeps children in lexicographic order; the bool marks files.
    std::map<std::string, std::pair<bool, DirNode*>> children;
};

} // namespace

std::string normalize_path(std::string_view raw)
{
    if (raw.empty())
        throw PathViolation("empty path");
    if (raw.find('\0') != std::string_view::npos)
        throw PathViolation("path contains a NUL byte");
    if (raw.find('\\') != std::string_view::npos)
        throw PathViolation("path contains a backslash: " + std::string(raw));
    if (raw.front() == '/')
        throw PathViolation("absolute paths are not allowed: " + std::string(raw));
    if (raw.size() >= 2 && raw[1] == ':')
        throw PathViolation("drive-qualified paths are not allowed: " + std::string(raw));
    if (raw.back() == '/')
        throw PathViolation("path names a directory: " + std::string(raw));

    std::string normalized;
    for (const auto& segment : split_segments(raw))
    {
        if (segment.empty() || segment == ".")
            continue;
        if (segment == "..")
            throw PathViolation("parent traversal is not allowed: " + std::string(raw));
        if (!normalized.empty())
            normalized += '/';
        normalized += segment;
    }
    if (normalized.empty())
        throw PathViolation("path has no file component: " + std::string(raw));
    return normalized;
}

bool is_text_content(std::string_view text)
{
    std::size_t i = 0;
    const auto n = text.size();
    while (i < n)
    {
        const auto c = static_cast<unsigned char>(text[i]);
        if (c == 0)
            return false;
        std::size_t extra = 0;
        std::uint32_t cp = 0;
        if (c < 0x80)
        {
            ++i;
            continue;
        }
        if ((c & 0xE0) == 0xC0)
        {
            extra = 1;
            cp = c & 0x1F;
        }
        else if ((c & 0xF0) == 0xE0)
        {
            extra = 2;
            cp = c & 0x0F;
        }
        else if ((c & 0xF8) == 0xF0)
        {
            extra = 3;
            cp = c & 0x07;
        }
        else
        {
            return false;
        }
        if (i + extra >= n)
            return false;
        for (std::size_t k = 1; k <= extra; ++k)
        {
            const auto cc = static_cast<unsigned char>(text[i + k]);
            if ((cc & 0xC0) != 0x80)
                return false;
            cp = (cp << 6) | (cc & 0x3F);
        }
        // Overlong forms, surrogates and out-of-range code points.
        if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000) ||
            (cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF)
            return false;
        i += extra + 1;
    }
    return true;
}

FileStore::FileStore(const Tokenizer& tokenizer, std::optional<fs::path> mirror_root)
    : tokenizer_(&tokenizer), mirror_root_(std::move(mirror_root))
{
    if (mirror_root_)
        fs::create_directories(*mirror_root_);
}

FileStore FileStore::open_directory(const Tokenizer& tokenizer, const fs::path& root)
{
    if (!fs::is_directory(root))
        throw ConfigError("workspace directory does not exist: " + root.string());

    FileStore store(tokenizer, std::nullopt);
    for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator(); ++it)
    {
        if (it->is_directory() && is_skipped_directory(it->path().filename()))
        {
            it.disable_recursion_pending();
            continue;
        }
        if (!it->is_regular_file() || it->is_symlink())
            continue;
        std::ifstream in(it->path(), std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        auto content = ss.str();
        if (!is_text_content(content))
            continue;
        store.entries_.emplace(fs::relative(it->path(), root).generic_string(), std::move(content));
    }
    store.mirror_root_ = root;
    return store;
}

bool FileStore::contains(std::string_view path) const
{
    return entries_.find(std::string(path)) != entries_.end();
}

std::optional<std::string> FileStore::read(std::string_view path) const
{
    auto it = entries_.find(std::string(path));
    if (it == entries_.end())
        return std::nullopt;
    return it->second;
}

std::vector<std::string> FileStore::list_files() const
{
    std::deque<DirNode> arena(1);
    for (const auto& [path, _] : entries_)
    {
        auto segments = split_segments(path);
        DirNode* node = &arena.front();
        for (std::size_t i = 0; i + 1 < segments.size(); ++i)
        {
            auto& slot = node->children[segments[i]];
            if (!slot.second)
            {
                arena.emplace_back();
                slot = {false, &arena.back()};
            }
            node = slot.second;
        }
        node->children[segments.back()] = {true, nullptr};
    }

    std::vector<std::string> out;
    out.reserve(entries_.size());
    std::deque<std::pair<const DirNode*, std::string>> queue{{&arena.front(), ""}};
    while (!queue.empty())
    {
        auto [node, prefix] = queue.front();
        queue.pop_front();
        for (const auto& [name, child] : node->children)
        {
            auto full = prefix.empty() ? name : prefix + "/" + name;
            if (child.first)
                out.push_back(std::move(full));
            else
                queue.emplace_back(child.second, std::move(full));
        }
    }
    return out;
}

Message FileStore::view_files(const std::vector<std::string>& paths) const
{
    std::string body;
    for (const auto& raw : paths)
    {
        if (!body.empty())
            body += "\n\n";
        std::string path;
        try
        {
            path = normalize_path(raw);
        }
        catch (const PathViolation&)
        {
            body += "File not found: " + raw;
            continue;
        }
        auto it = entries_.find(path);
        if (it == entries_.end())
        {
            body += "File not found: " + raw;
            continue;
        }
        body += path + "\n```\n" + it->second + "\n```";
    }
    return make_message(MessageKind::FunctionResponse, std::move(body), *tokenizer_);
}

void FileStore::validate_write(const std::string& path, const std::string& content,
                               std::optional<std::size_t> max_file_tokens) const
{
    if (!is_text_content(content))
        throw InvalidContent("file content must be UTF-8 text: " + path);
    if (max_file_tokens)
    {
        const auto tokens = tokenizer_->count(content);
        if (tokens > *max_file_tokens)
        {
            throw FileTooLarge("file " + path + " is " + std::to_string(tokens) +
                               " tokens; the limit is " + std::to_string(*max_file_tokens) +
                               " tokens. Split it into smaller files.");
        }
    }
    // A path cannot be both a file and a directory.
    auto below = entries_.lower_bound(path + "/");
    if (below != entries_.end() && below->first.rfind(path + "/", 0) == 0)
        throw PathViolation("path is an existing directory: " + path);
    for (auto slash = path.find('/'); slash != std::string::npos; slash = path.find('/', slash + 1))
    {
        if (entries_.count(path.substr(0, slash)))
            throw PathViolation("parent of " + path + " is an existing file");
    }
}

void FileStore::put(std::string_view raw_path, std::string content, std::optional<std::size_t> max_file_tokens)
{
    auto path = normalize_path(raw_path);
    validate_write(path, content, max_file_tokens);
    write_through(path, content);
    entries_[path] = std::move(content);
}

Message FileStore::write_files(const std::vector<FileWrite>& files, std::optional<std::size_t> max_file_tokens)
{
    auto errors = nlohmann::ordered_json::array();
    std::vector<std::pair<std::string, const std::string*>> accepted;
    std::set<std::string> batch;
    for (const auto& file : files)
    {
        try
        {
            auto path = normalize_path(file.path);
            validate_write(path, file.content, max_file_tokens);
            for (const auto& other : batch)
            {
                if (other.rfind(path + "/", 0) == 0 || path.rfind(other + "/", 0) == 0)
                    throw PathViolation("paths " + other + " and " + path + " conflict");
            }
            batch.insert(path);
            accepted.emplace_back(std::move(path), &file.content);
        }
        catch (const Error& e)
        {
            errors.push_back({{"file_path", file.path}, {"error", e.what()}});
        }
    }

    nlohmann::ordered_json response;
    if (!errors.empty())
    {
        response["write_files_status"] = "error";
        response["message"] = "No files were written.";
        response["errors"] = std::move(errors);
        return make_message(MessageKind::FunctionResponse, response.dump(), *tokenizer_);
    }
    if (files.empty())
    {
        response["write_files_status"] = "error";
        response["message"] = "No files were provided.";
        return make_message(MessageKind::FunctionResponse, response.dump(), *tokenizer_);
    }

    for (const auto& [path, content] : accepted)
    {
        write_through(path, *content);
        entries_[path] = *content;
    }
    response["write_files_status"] = "success";
    return make_message(MessageKind::FunctionResponse, response.dump(), *tokenizer_);
}

Message FileStore::delete_files(const std::vector<std::string>& paths)
{
    auto deleted = nlohmann::ordered_json::array();
    auto not_found = nlohmann::ordered_json::array();
    for (const auto& raw : paths)
    {
        if (raw == kDeleteAllSentinel)
        {
            for (const auto& [path, _] : entries_)
                deleted.push_back(path);
            entries_.clear();
            clear_mirror();
            continue;
        }
        std::string path;
        try
        {
            path = normalize_path(raw);
        }
        catch (const PathViolation&)
        {
            not_found.push_back(raw);
            continue;
        }
        if (entries_.erase(path) == 0)
        {
            not_found.push_back(raw);
            continue;
        }
        remove_through(path);
        deleted.push_back(path);
    }

    nlohmann::ordered_json response;
    response["delete_files_status"] = "success";
    response["deleted"] = std::move(deleted);
    if (!not_found.empty())
        response["not_found"] = std::move(not_found);
    return make_message(MessageKind::FunctionResponse, response.dump(), *tokenizer_);
}

void FileStore::write_through(const std::string& path, const std::string& content) const
{
    if (!mirror_root_)
        return;
    const auto target = *mirror_root_ / fs::path(path);
    // Refuse to follow symlinks planted inside the workspace.
    fs::path walk = *mirror_root_;
    for (const auto& part : fs::path(path))
    {
        walk /= part;
        if (fs::is_symlink(fs::symlink_status(walk)))
            fs::remove(walk);
    }
    fs::create_directories(target.parent_path());
    std::ofstream out(target, std::ios::binary | std::ios::trunc);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out)
        throw Error("failed to write " + target.string());
}

void FileStore::remove_through(const std::string& path) const
{
    if (!mirror_root_)
        return;
    auto target = *mirror_root_ / fs::path(path);
    std::error_code ec;
    fs::remove(target, ec);
    // Prune directories emptied by the delete, never the root itself.
    for (auto dir = target.parent_path(); dir != *mirror_root_ && dir.string().size() > mirror_root_->string().size();
         dir = dir.parent_path())
    {
        if (!fs::is_directory(dir, ec) || !fs::is_empty(dir, ec))
            break;
        fs::remove(dir, ec);
    }
}

void FileStore::clear_mirror() const
{
    if (!mirror_root_ || !fs::exists(*mirror_root_))
        return;
    for (const auto& entry : fs::directory_iterator(*mirror_root_))
        fs::remove_all(entry.path());
}

void FileStore::sync_mirror() const
{
    if (!mirror_root_)
        return;
    fs::create_directories(*mirror_root_);

    std::vector<fs::path> stale;
    for (auto it = fs::recursive_directory_iterator(*mirror_root_); it != fs::recursive_directory_iterator(); ++it)
    {
        const auto rel = fs::relative(it->path(), *mirror_root_).generic_string();
        if (it->is_symlink())
        {
            stale.push_back(it->path());
            it.disable_recursion_pending();
            continue;
        }
        if (it->is_directory())
        {
            auto below = entries_.lower_bound(rel + "/");
            if (below == entries_.end() || below->first.rfind(rel + "/", 0) != 0)
            {
                stale.push_back(it->path());
                it.disable_recursion_pending();
            }
            continue;
        }
        auto entry = entries_.find(rel);
        if (entry == entries_.end())
        {
            stale.push_back(it->path());
            continue;
        }
        std::ifstream in(it->path(), std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        if (ss.str() != entry->second)
            stale.push_back(it->path());
    }
    std::error_code ec;
    for (const auto& p : stale)
        fs::remove_all(p, ec);
    for (const auto& [path, content] : entries_)
    {
        if (!fs::exists(*mirror_root_ / fs::path(path)))
            write_through(path, content);
    }
}

std::string FileStore::content_hash() const
{
    std::string material;
    for (const auto& [path, content] : entries_)
    {
        material += path;
        material += '\0';
        material += std::to_string(content.size());
        material += '\0';
        material += content;
    }
    return sha256_hex(material);
}

} // namespace l2mac
