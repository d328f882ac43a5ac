#include "l2mac/process_runner.hpp"

#include <cerrno>
#include <csignal>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

extern char** environ;

namespace l2mac {

namespace {

std::string resolve_program(const std::string& program)
{
    if (program.find('/') != std::string::npos)
        return program;
    const char* path = std::getenv("PATH");
    std::string dirs(path ? path : "");
    std::size_t start = 0;
    while (start <= dirs.size())
    {
        auto end = dirs.find(':', start);
        if (end == std::string::npos)
            end = dirs.size();
        auto dir = dirs.substr(start, end - start);
        if (dir.empty())
            dir = ".";
        auto candidate = dir + "/" + program;
        if (::access(candidate.c_str(), X_OK) == 0)
            return candidate;
        start = end + 1;
    }
    return {};
}

class Pipe
{
public:
    Pipe()
    {
        if (::pipe2(fds_, O_CLOEXEC) != 0)
            throw std::runtime_error(std::string("pipe2 failed: ") + std::strerror(errno));
    }
    ~Pipe()
    {
        close_read();
        close_write();
    }
    Pipe(const Pipe&) = delete;
    Pipe& operator=(const Pipe&) = delete;

    int read_end() const { return fds_[0]; }
    int write_end() const { return fds_[1]; }
    void close_read()
    {
        if (fds_[0] >= 0)
            ::close(fds_[0]);
        fds_[0] = -1;
    }
    void close_write()
    {
        if (fds_[1] >= 0)
            ::close(fds_[1]);
        fds_[1] = -1;
    }

private:
    int fds_[2]{-1, -1};
};

} // namespace

ProcessRunner::ProcessRunner(std::set<std::string> allowed_programs, std::size_t max_output_bytes)
    : allowed_(std::move(allowed_programs)), max_output_bytes_(max_output_bytes)
{
}

bool ProcessRunner::program_available(const std::string& program)
{
    const auto resolved = resolve_program(program);
    return !resolved.empty() && ::access(resolved.c_str(), X_OK) == 0;
}

ProcessResult ProcessRunner::run(const ProcessSpec& spec) const
{
    if (spec.argv.empty())
        throw std::invalid_argument("process argv is empty");
    if (!allows(spec.argv.front()))
        throw std::invalid_argument("program not allowlisted: " + spec.argv.front());

    std::vector<char*> argv;
    argv.reserve(spec.argv.size() + 1);
    for (const auto& arg : spec.argv)
        argv.push_back(const_cast<char*>(arg.c_str()));
    argv.push_back(nullptr);

    // Everything the child needs is prepared here: between fork and exec
    // only async-signal-safe calls are allowed.
    const auto program = resolve_program(spec.argv.front());
    std::vector<std::string> env_strings;
    for (char** e = environ; e && *e; ++e)
    {
        std::string entry(*e);
        const auto key = entry.substr(0, entry.find('='));
        if (spec.env.count(key) == 0)
            env_strings.push_back(std::move(entry));
    }
    for (const auto& [key, value] : spec.env)
        env_strings.push_back(key + "=" + value);
    std::vector<char*> envp;
    envp.reserve(env_strings.size() + 1);
    for (auto& entry : env_strings)
        envp.push_back(entry.data());
    envp.push_back(nullptr);

    Pipe output;
    const pid_t pid = ::fork();
    if (pid < 0)
        throw std::runtime_error(std::string("fork failed: ") + std::strerror(errno));

    if (pid == 0)
    {
        // Child: own process group so a timeout can kill the whole tree.
        ::setpgid(0, 0);
        ::dup2(output.write_end(), STDOUT_FILENO);
        ::dup2(output.write_end(), STDERR_FILENO);
        int devnull = ::open("/dev/null", O_RDONLY);
        if (devnull >= 0)
            ::dup2(devnull, STDIN_FILENO);
        if (!spec.cwd.empty() && ::chdir(spec.cwd.c_str()) != 0)
            ::_exit(126);
        if (!program.empty())
            ::execve(program.c_str(), argv.data(), envp.data());
        ::_exit(127);
    }

    ::setpgid(pid, pid);
    output.close_write();

    ProcessResult result;
    const auto deadline = std::chrono::steady_clock::now() + spec.timeout;
    char buf[8192];
    bool open = true;
    while (open)
    {
        const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - std::chrono::steady_clock::now());
        if (remaining.count() <= 0)
        {
            result.timed_out = true;
            break;
        }
        pollfd pfd{output.read_end(), POLLIN, 0};
        const int ready = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(remaining.count(), 1000)));
        if (ready < 0)
        {
            if (errno == EINTR)
                continue;
            break;
        }
        if (ready == 0)
            continue;
        const auto n = ::read(output.read_end(), buf, sizeof buf);
        if (n <= 0)
        {
            open = false;
            break;
        }
        const auto room = max_output_bytes_ - std::min(max_output_bytes_, result.output.size());
        if (static_cast<std::size_t>(n) > room)
            result.output_capped = true;
        result.output.append(buf, std::min<std::size_t>(static_cast<std::size_t>(n), room));
    }

    if (result.timed_out)
        ::kill(-pid, SIGKILL);

    int status = 0;
    while (::waitpid(pid, &status, 0) < 0 && errno == EINTR)
    {
    }
    // Grandchildren may still hold the pipe; make sure none outlive the call.
    ::kill(-pid, SIGKILL);

    if (WIFEXITED(status))
        result.exit_code = WEXITSTATUS(status);
    else if (WIFSIGNALED(status))
        result.exit_code = 128 + WTERMSIG(status);
    return result;
}

} // namespace l2mac
