#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "c123/boundary.hpp"
#include "c123/errors.hpp"
#include "c123/guidance.hpp"
#include "c123/raster.hpp"

namespace c123 {

// Adapter framing, shared by guidance and embedding backends: the 8-byte
// magic, a 4-byte little-endian length, one UTF-8 JSON header line, then raw
// float32 little-endian payload. The header's payload_floats field tells the
// reader how many floats follow.
inline constexpr char kWireMagic[8] = {'C', '1', '2', '3', 'G', 'U', 'I', 'D'};

struct WireMessage {
    nlohmann::json header;
    std::vector<float> payload;
};

namespace detail {

inline void write_all(int fd, const void* buf, size_t n) {
    const char* p = static_cast<const char*>(buf);
    while (n > 0) {
        const ssize_t w = ::write(fd, p, n);
        if (w <= 0) throw BackendError("wire: connection write failed");
        p += w;
        n -= static_cast<size_t>(w);
    }
}

inline void read_all(int fd, void* buf, size_t n) {
    char* p = static_cast<char*>(buf);
    while (n > 0) {
        const ssize_t r = ::read(fd, p, n);
        if (r <= 0) throw BackendError("wire: connection closed mid-message");
        p += r;
        n -= static_cast<size_t>(r);
    }
}

}  // namespace detail

inline void wire_write(int fd, WireMessage message) {
    message.header["payload_floats"] = message.payload.size();
    const std::string header = message.header.dump();
    if (header.size() > 0xFFFFFFFFu) throw BackendError("wire: oversized header");
    detail::write_all(fd, kWireMagic, sizeof(kWireMagic));
    const uint32_t len = static_cast<uint32_t>(header.size());
    unsigned char len_le[4] = {static_cast<unsigned char>(len & 0xFF),
                               static_cast<unsigned char>((len >> 8) & 0xFF),
                               static_cast<unsigned char>((len >> 16) & 0xFF),
                               static_cast<unsigned char>((len >> 24) & 0xFF)};
    detail::write_all(fd, len_le, 4);
    detail::write_all(fd, header.data(), header.size());
    if (!message.payload.empty())
        detail::write_all(fd, message.payload.data(), message.payload.size() * sizeof(float));
}

inline WireMessage wire_read(int fd) {
    char magic[8];
    detail::read_all(fd, magic, sizeof(magic));
    if (std::memcmp(magic, kWireMagic, sizeof(magic)) != 0)
        throw BackendError("wire: bad magic");
    unsigned char len_le[4];
    detail::read_all(fd, len_le, 4);
    const uint32_t len = static_cast<uint32_t>(len_le[0]) | (static_cast<uint32_t>(len_le[1]) << 8) |
                         (static_cast<uint32_t>(len_le[2]) << 16) |
                         (static_cast<uint32_t>(len_le[3]) << 24);
    if (len > (1u << 26)) throw BackendError("wire: oversized header");
    std::string header(len, '\0');
    detail::read_all(fd, header.data(), len);
    WireMessage message;
    try {
        message.header = nlohmann::json::parse(header);
    } catch (const std::exception& e) {
        throw BackendError(std::string("wire: bad header json: ") + e.what());
    }
    const uint64_t count = message.header.value("payload_floats", uint64_t{0});
    if (count > (1u << 28)) throw BackendError("wire: oversized payload");
    message.payload.resize(count);
    if (count > 0) detail::read_all(fd, message.payload.data(), count * sizeof(float));
    return message;
}

namespace detail {

// "host:port" with a numeric port connects over TCP; anything else is a
// unix-domain socket path.
inline int connect_address(const std::string& address) {
    const size_t colon = address.rfind(':');
    bool tcp = false;
    int port = 0;
    if (colon != std::string::npos && colon + 1 < address.size() &&
        address.find('/') == std::string::npos) {
        tcp = true;
        for (size_t i = colon + 1; i < address.size(); ++i) {
            if (address[i] < '0' || address[i] > '9') {
                tcp = false;
                break;
            }
            port = port * 10 + (address[i] - '0');
        }
    }
    if (tcp) {
        const std::string host = address.substr(0, colon);
        addrinfo hints{};
        hints.ai_family = AF_INET;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        if (getaddrinfo(host.c_str(), address.substr(colon + 1).c_str(), &hints, &res) != 0 || !res)
            throw BackendError("wire: cannot resolve " + address);
        const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
        if (fd < 0) {
            freeaddrinfo(res);
            throw BackendError("wire: socket creation failed");
        }
        if (::connect(fd, res->ai_addr, res->ai_addrlen) != 0) {
            freeaddrinfo(res);
            ::close(fd);
            throw BackendError("wire: cannot connect to " + address);
        }
        freeaddrinfo(res);
        return fd;
    }
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (address.size() >= sizeof(addr.sun_path))
        throw BackendError("wire: unix socket path too long: " + address);
    std::strncpy(addr.sun_path, address.c_str(), sizeof(addr.sun_path) - 1);
    const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (fd < 0) throw BackendError("wire: socket creation failed");
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(fd);
        throw BackendError("wire: cannot connect to " + address);
    }
    return fd;
}

inline std::vector<float> image_floats(const Image& image) {
    std::vector<float> out(image.data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(image.data[i]);
    return out;
}

}  // namespace detail

// One connected request/response channel with sequential ids.
class WireClient {
  public:
    explicit WireClient(const std::string& address) : fd_(detail::connect_address(address)) {}
    WireClient(const WireClient&) = delete;
    WireClient& operator=(const WireClient&) = delete;
    ~WireClient() {
        if (fd_ >= 0) ::close(fd_);
    }

    WireMessage call(WireMessage request) {
        const uint64_t id = next_id_++;
        request.header["id"] = id;
        wire_write(fd_, std::move(request));
        WireMessage response = wire_read(fd_);
        if (response.header.value("id", uint64_t{0}) != id)
            throw BackendError("wire: response id mismatch");
        if (response.header.contains("error"))
            throw BackendError("wire: backend reported: " +
                               response.header["error"].get<std::string>());
        return response;
    }

  private:
    int fd_ = -1;
    uint64_t next_id_ = 1;
};

// Remote noise predictor. The diffusion timeline is fetched once at
// connection time; predictions carry only protocol fields, never the
// in-process test-double extras.
class IpcNoisePredictor : public NoisePredictor {
  public:
    explicit IpcNoisePredictor(const std::string& address) : client_(address) {
        WireMessage info;
        info.header["op"] = "info";
        WireMessage reply = client_.call(std::move(info));
        total_steps_ = reply.header.value("total_steps", 0);
        if (total_steps_ < 1 || reply.payload.size() != static_cast<size_t>(total_steps_))
            throw BackendError("wire: invalid diffusion timeline from backend");
        alpha_bar_.assign(1, 1.0);
        for (float v : reply.payload) alpha_bar_.push_back(static_cast<double>(v));
    }

    int total_diffusion_steps() const override { return total_steps_; }

    double alpha_bar(int t_diff) const override {
        if (t_diff < 1 || t_diff > total_steps_)
            throw std::invalid_argument("alpha_bar: t_diff outside [1, total_steps]");
        return alpha_bar_[static_cast<size_t>(t_diff)];
    }

    Image predict_noise(const PredictRequest& request) override {
        if (!request.z_t) throw BackendError("wire: predict request carries no latent");
        const Image& z_t = *request.z_t;
        WireMessage msg;
        msg.header["op"] = "predict";
        msg.header["t_diff"] = request.t_diff;
        msg.header["shape"] = {z_t.height, z_t.width, z_t.channels};
        msg.payload = detail::image_floats(z_t);
        if (const auto* text = std::get_if<TextCondition>(&request.condition)) {
            msg.header["kind"] = "TEXT";
            msg.header["prompt"] = text->prompt;
        } else {
            const auto& ip = std::get<ImagePoseCondition>(request.condition);
            if (!ip.reference) throw BackendError("wire: image condition carries no reference");
            msg.header["kind"] = "IMAGE3D";
            msg.header["rotation"] = std::vector<double>(ip.rotation.m.begin(), ip.rotation.m.end());
            msg.header["translation"] = {ip.translation.x, ip.translation.y, ip.translation.z};
            msg.header["reference_shape"] = {ip.reference->height, ip.reference->width,
                                             ip.reference->channels};
            const std::vector<float> ref = detail::image_floats(*ip.reference);
            msg.payload.insert(msg.payload.end(), ref.begin(), ref.end());
        }
        WireMessage reply = client_.call(std::move(msg));
        if (reply.payload.size() != z_t.data.size())
            throw BackendError("wire: predicted noise has wrong size");
        Image out(z_t.height, z_t.width, z_t.channels);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = reply.payload[i];
        return out;
    }

  private:
    WireClient client_;
    int total_steps_ = 0;
    std::vector<double> alpha_bar_;
};

// Remote embedding backend speaking the same framing with kind EMBED.
class IpcEmbeddingModel : public EmbeddingModel {
  public:
    explicit IpcEmbeddingModel(const std::string& address) : client_(address) {
        WireMessage info;
        info.header["op"] = "info";
        WireMessage reply = client_.call(std::move(info));
        dim_ = reply.header.value("dim", 0);
        if (dim_ < 1) throw BackendError("wire: embedding backend reported no dimension");
    }

    int dim() const override { return dim_; }

    std::vector<double> embed_image(const Image& image) override {
        WireMessage msg;
        msg.header["op"] = "embed";
        msg.header["kind"] = "EMBED";
        msg.header["payload_kind"] = "image";
        msg.header["shape"] = {image.height, image.width, image.channels};
        msg.payload = detail::image_floats(image);
        return finish(client_.call(std::move(msg)));
    }

    std::vector<double> embed_text(const std::string& prompt) override {
        WireMessage msg;
        msg.header["op"] = "embed";
        msg.header["kind"] = "EMBED";
        msg.header["payload_kind"] = "text";
        msg.header["prompt"] = prompt;
        return finish(client_.call(std::move(msg)));
    }

  private:
    std::vector<double> finish(WireMessage reply) {
        if (reply.payload.size() != static_cast<size_t>(dim_))
            throw BackendError("wire: embedding has wrong dimension");
        return std::vector<double>(reply.payload.begin(), reply.payload.end());
    }

    WireClient client_;
    int dim_ = 0;
};

// Minimal loopback server for tests and local adapters: accepts connections
// sequentially on 127.0.0.1 and answers each message with the handler until
// the peer disconnects.
class WireServer {
  public:
    using Handler = std::function<WireMessage(const WireMessage&)>;

    explicit WireServer(Handler handler) : handler_(std::move(handler)) {
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (listen_fd_ < 0) throw BackendError("wire: server socket failed");
        const int one = 1;
        ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = 0;
        if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
            ::listen(listen_fd_, 4) != 0) {
            ::close(listen_fd_);
            throw BackendError("wire: server bind failed");
        }
        socklen_t len = sizeof(addr);
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
        thread_ = std::thread([this] { accept_loop(); });
    }

    WireServer(const WireServer&) = delete;
    WireServer& operator=(const WireServer&) = delete;

    ~WireServer() {
        stopping_ = true;
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        if (thread_.joinable()) thread_.join();
    }

    std::string address() const { return "127.0.0.1:" + std::to_string(port_); }

  private:
    void accept_loop() {
        while (!stopping_) {
            const int fd = ::accept(listen_fd_, nullptr, nullptr);
            if (fd < 0) break;
            try {
                for (;;) {
                    WireMessage request = wire_read(fd);
                    WireMessage response;
                    try {
                        response = handler_(request);
                    } catch (const std::exception& e) {
                        response.header["error"] = e.what();
                    }
                    response.header["id"] = request.header.value("id", uint64_t{0});
                    wire_write(fd, std::move(response));
                }
            } catch (const BackendError&) {
                // peer hung up
            }
            ::close(fd);
        }
    }

    Handler handler_;
    int listen_fd_ = -1;
    int port_ = 0;
    std::atomic<bool> stopping_{false};
    std::thread thread_;
};

// Server-side translation of wire messages onto an in-process predictor.
// Real deployments reimplement this shape around an actual model; tests use
// it to close the loop.
inline WireServer::Handler make_predictor_handler(NoisePredictor& predictor) {
    return [&predictor](const WireMessage& request) {
        WireMessage response;
        const std::string op = request.header.value("op", "");
        if (op == "info") {
            const int total = predictor.total_diffusion_steps();
            response.header["total_steps"] = total;
            response.payload.reserve(static_cast<size_t>(total));
            for (int t = 1; t <= total; ++t)
                response.payload.push_back(static_cast<float>(predictor.alpha_bar(t)));
            return response;
        }
        if (op != "predict") throw BackendError("wire: unknown op " + op);
        const auto shape = request.header.at("shape").get<std::vector<int>>();
        if (shape.size() != 3) throw BackendError("wire: bad shape header");
        Image z_t(shape[0], shape[1], shape[2]);
        if (request.payload.size() < z_t.data.size()) throw BackendError("wire: short payload");
        for (size_t i = 0; i < z_t.data.size(); ++i) z_t.data[i] = request.payload[i];

        PredictRequest local;
        local.z_t = &z_t;
        local.t_diff = request.header.value("t_diff", 0);
        Image reference;
        if (request.header.value("kind", "") == "IMAGE3D") {
            const auto rshape = request.header.at("reference_shape").get<std::vector<int>>();
            if (rshape.size() != 3) throw BackendError("wire: bad reference shape");
            reference = Image(rshape[0], rshape[1], rshape[2]);
            if (request.payload.size() != z_t.data.size() + reference.data.size())
                throw BackendError("wire: short payload");
            for (size_t i = 0; i < reference.data.size(); ++i)
                reference.data[i] = request.payload[z_t.data.size() + i];
            ImagePoseCondition cond;
            cond.reference = &reference;
            const auto rot = request.header.at("rotation").get<std::vector<double>>();
            if (rot.size() != 9) throw BackendError("wire: bad rotation");
            std::copy(rot.begin(), rot.end(), cond.rotation.m.begin());
            const auto tr = request.header.at("translation").get<std::vector<double>>();
            if (tr.size() != 3) throw BackendError("wire: bad translation");
            cond.translation = Vec3{tr[0], tr[1], tr[2]};
            local.condition = cond;
            const Image eps = predictor.predict_noise(local);
            response.payload = detail::image_floats(eps);
        } else {
            local.condition = TextCondition{request.header.value("prompt", "")};
            const Image eps = predictor.predict_noise(local);
            response.payload = detail::image_floats(eps);
        }
        response.header["alpha_bar"] = predictor.alpha_bar(local.t_diff);
        return response;
    };
}

inline WireServer::Handler make_embedder_handler(EmbeddingModel& model) {
    return [&model](const WireMessage& request) {
        WireMessage response;
        const std::string op = request.header.value("op", "");
        if (op == "info") {
            response.header["dim"] = model.dim();
            return response;
        }
        if (op != "embed") throw BackendError("wire: unknown op " + op);
        std::vector<double> embedding;
        if (request.header.value("payload_kind", "") == "text") {
            embedding = model.embed_text(request.header.value("prompt", ""));
        } else {
            const auto shape = request.header.at("shape").get<std::vector<int>>();
            if (shape.size() != 3) throw BackendError("wire: bad shape header");
            Image image(shape[0], shape[1], shape[2]);
            if (request.payload.size() != image.data.size())
                throw BackendError("wire: short payload");
            for (size_t i = 0; i < image.data.size(); ++i) image.data[i] = request.payload[i];
            embedding = model.embed_image(image);
        }
        response.payload.reserve(embedding.size());
        for (double v : embedding) response.payload.push_back(static_cast<float>(v));
        return response;
    };
}

}  // namespace c123
